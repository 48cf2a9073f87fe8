#include "cli.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dmvfc/encoders.hpp"
#include "dmvfc/error.hpp"
#include "dmvfc/fiberdata.hpp"
#include "dmvfc/finetune.hpp"
#include "dmvfc/gradcheck.hpp"
#include "dmvfc/infer_eval.hpp"
#include "dmvfc/metrics.hpp"
#include "dmvfc/parallel.hpp"
#include "dmvfc/pretrain.hpp"
#include "dmvfc/version.hpp"

namespace dmvfc::cli {

namespace {

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

constexpr const char* kOutputs = "Outputs";

// Options that do not change any output byte stay out of the hash, so a
// rerun into another directory reproduces the same headers.
bool hashed(const CLI::Option* opt) {
    const std::string name = opt->get_name();
    return name != "--help" && name != "--config" && name != "--threads" && opt->get_group() != kOutputs;
}

// Canonical `name=value` listing of every effective option of `sub`,
// sorted by name; explicit values win over defaults.
std::string config_hash(const CLI::App* sub) {
    std::vector<std::string> lines;
    for (const CLI::Option* opt : sub->get_options()) {
        if (!hashed(opt)) continue;
        std::string value;
        if (opt->count() > 0) {
            for (const auto& r : opt->results()) value += r + ";";
        } else {
            value = opt->get_default_str();
        }
        lines.push_back(opt->get_name() + "=" + value);
    }
    std::sort(lines.begin(), lines.end());
    std::string canon = sub->get_name() + "\n";
    for (const auto& l : lines) canon += l + "\n";
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canon)));
    return buf;
}

struct Header {
    std::string command;
    std::string hash;
    std::vector<std::pair<std::string, std::uint64_t>> seeds;

    std::string line() const {
        std::string s = "dmvfc " + std::string(kVersion) + " " + command + " config=" + hash + " seeds=";
        if (seeds.empty()) s += "none";
        for (std::size_t i = 0; i < seeds.size(); ++i)
            s += (i ? "," : "") + seeds[i].first + ":" + std::to_string(seeds[i].second);
        return s;
    }
};

// Binary outputs get their header in a one-line sidecar `<path>.meta`.
void write_sidecar(const std::string& path, const Header& header) {
    std::ofstream out(path + ".meta");
    if (!out) throw Error("cannot open " + path + ".meta for writing");
    out << header.line() << '\n';
}

void write_matrix_csv(const std::string& path, const Header& header, const std::string& prefix,
                      const ad::Matrix& m) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << "# " << header.line() << '\n' << "fiber_index";
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << ',' << prefix << c;
    out << '\n';
    char buf[40];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        out << r;
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            std::snprintf(buf, sizeof buf, ",%.10g", m(r, c));
            out << buf;
        }
        out << '\n';
    }
}

struct SynthArgs {
    SynthConfig config;
    std::uint64_t seed = 7;
    std::string out, truth;
    bool text = false;
};

struct PretrainArgs {
    std::string bundle, out, history, view = "geo";
    PretrainConfig config;
};

struct FinetuneArgs {
    std::string bundle, geo_weights, func_weights, out_geo, out_func, out_model, history;
    std::string init = "cross";
    int k = 8;
    std::uint64_t init_seed = 3;
    bool geometry_only = false;
    FinetuneConfig config;
};

struct InferArgs {
    std::string bundle, geo_weights, model, labels_out, q_out, embeddings_out, model_out;
    InferenceConfig config;
    bool single_pass = false;
};

struct EvalArgs {
    std::string bundle, labels, out;
};

struct BaselineArgs {
    std::string bundle, out;
    double threshold = 2.0;
};

struct ConsistencyArgs {
    std::vector<std::string> bundles, labels;
    std::string out;
};

struct GradcheckArgs {
    int instances = 20;
    std::uint64_t seed = 1;
    int entries = 8;
    double tolerance = 1e-4;
    std::string out;
};

void add_synth_options(CLI::App* sub, SynthArgs& a) {
    auto& c = a.config;
    sub->add_option("--G,--groups", c.groups, "Geometric groups")->check(CLI::PositiveNumber);
    sub->add_option("--F,--subgroups", c.subgroups, "Functional subgroups per group")->check(CLI::PositiveNumber);
    sub->add_option("--n,--fibers", c.fibers, "Total fibers")->check(CLI::PositiveNumber);
    sub->add_option("--points", c.points, "Points per fiber after resampling");
    sub->add_option("--raw-points", c.raw_points, "Polyline points before resampling");
    sub->add_option("--bold-length", c.bold_length, "BOLD samples per endpoint after downsampling");
    sub->add_option("--raw-bold-length", c.raw_bold_length, "BOLD samples before downsampling");
    sub->add_option("--radius", c.arc_radius, "Template arc radius (mm)");
    sub->add_option("--arc-angle", c.arc_angle, "Template arc span (radians)");
    sub->add_option("--separation", c.group_separation, "Distance between neighbouring groups (mm)");
    sub->add_option("--subgroup-offset", c.subgroup_offset, "Radial shift between subgroups (mm)");
    sub->add_option("--subgroup-phase", c.subgroup_phase, "Arc rotation between subgroups (radians)");
    sub->add_option("--sigma-geo", c.sigma_geo, "Per-point jitter (mm)");
    sub->add_option("--sigma-shift", c.sigma_shift, "Per-fiber translation jitter (mm)");
    sub->add_option("--sigma-rotation", c.sigma_rotation, "Per-fiber arc rotation jitter (radians)");
    sub->add_option("--flip-probability", c.flip_probability, "Chance of storing a fiber reversed");
    sub->add_option("--sigma-bold", c.sigma_bold, "BOLD noise relative to the latent");
    sub->add_option("--bold-smoothness", c.bold_smoothness, "AR(1) coefficient of the latents");
    sub->add_option("--fa-base", c.fa_base, "FA level of group 0");
    sub->add_option("--fa-step", c.fa_group_step, "FA difference between neighbouring groups");
    sub->add_option("--sigma-fa", c.sigma_fa, "Per-point FA noise");
    sub->add_flag("--shuffle", c.shuffle, "Interleave records");
    sub->add_option("--name", c.name, "Bundle name");
    sub->add_option("--seed", a.seed, "Generator seed");
    sub->add_option("--out", a.out, "Output bundle path")->required()->group(kOutputs);
    sub->add_flag("--text", a.text, "Write the JSON-lines variant instead of binary");
    sub->add_option("--truth", a.truth, "Also write the ground-truth labels CSV")->group(kOutputs);
}

void add_pretrain_options(CLI::App* sub, PretrainArgs& a) {
    auto& c = a.config;
    sub->add_option("--bundle", a.bundle, "Input bundle")->required();
    sub->add_option("--view", a.view, "geo or func")->check(CLI::IsMember({"geo", "func"}));
    sub->add_option("--epochs", c.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
    sub->add_option("--lr", c.schedule.lr0, "Initial learning rate");
    sub->add_option("--decay", c.schedule.decay, "Learning-rate decay factor");
    sub->add_option("--decay-every", c.schedule.interval, "Epochs between decays (0 = never)");
    sub->add_option("--batch", c.batch, "Pairs per optimizer step")->check(CLI::PositiveNumber);
    sub->add_option("--pairs", c.pairs_per_epoch, "Pairs per epoch (0 = one per fiber)");
    sub->add_option("--seed", c.seed, "Initialisation and pair-sampling seed");
    sub->add_option("--checkpoint-every", c.checkpoint_every, "Epochs between checkpoints (0 = final only)");
    sub->add_option("--out", a.out, "Output weights")->required()->group(kOutputs);
    sub->add_option("--history", a.history, "Loss history CSV")->group(kOutputs);
}

void add_finetune_options(CLI::App* sub, FinetuneArgs& a) {
    auto& c = a.config;
    sub->add_option("--bundle", a.bundle, "Training bundle")->required();
    sub->add_option("--geo-weights", a.geo_weights, "Pretrained geometric encoder")->required();
    sub->add_option("--func-weights", a.func_weights, "Pretrained functional encoder");
    sub->add_option("--k", a.k, "Number of clusters")->check(CLI::PositiveNumber);
    sub->add_option("--init", a.init, "cross or independent centroid initialisation")
        ->check(CLI::IsMember({"cross", "independent"}));
    sub->add_option("--init-seed", a.init_seed, "k-means seed");
    sub->add_option("--epochs", c.epochs, "Fine-tuning epochs")->check(CLI::NonNegativeNumber);
    sub->add_option("--lr", c.lr, "Learning rate");
    sub->add_option("--gamma", c.gamma, "Weight of the clustering loss");
    sub->add_option("--batch", c.batch, "Fibers per optimizer step")->check(CLI::PositiveNumber);
    sub->add_option("--pairs", c.pairs_per_epoch, "Siamese pairs per epoch (0 = one per fiber)");
    sub->add_option("--seed", c.seed, "Shuffling and pair-sampling seed");
    sub->add_flag("--geometry-only", a.geometry_only, "Drop the functional view and set gamma to 0");
    sub->add_option("--out-geo", a.out_geo, "Fine-tuned geometric encoder")->required()->group(kOutputs);
    sub->add_option("--out-func", a.out_func, "Fine-tuned functional encoder")->group(kOutputs);
    sub->add_option("--out-model", a.out_model, "Cluster model")->required()->group(kOutputs);
    sub->add_option("--history", a.history, "Per-epoch loss CSV")->group(kOutputs);
}

void add_infer_options(CLI::App* sub, InferArgs& a) {
    sub->add_option("--bundle", a.bundle, "Bundle to label (BOLD not used)")->required();
    sub->add_option("--geo-weights", a.geo_weights, "Geometric encoder")->required();
    sub->add_option("--model", a.model, "Cluster model")->required();
    sub->add_option("--fa-weight", a.config.fa_weight, "Scale of the FA distance term")->check(CLI::NonNegativeNumber);
    sub->add_flag("--single-pass", a.single_pass, "Use FA references stored in the model");
    sub->add_option("--labels", a.labels_out, "Output labels CSV")->required()->group(kOutputs);
    sub->add_option("--q", a.q_out, "Output soft assignment CSV")->group(kOutputs);
    sub->add_option("--embeddings", a.embeddings_out, "Output embedding CSV")->group(kOutputs);
    sub->add_option("--model-out", a.model_out, "Copy of the model with this bundle's FA references")->group(kOutputs);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Reads `key = value` lines; blank lines and `#` comments are skipped.
std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::vector<std::pair<std::string, std::string>> items;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(number) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front())
            value = value.substr(1, value.size() - 2);
        if (key.rfind("--", 0) == 0) key.erase(0, 2);
        items.emplace_back(key, value);
    }
    return items;
}

// Splices the options of a subcommand's `--config` file into the argument
// list, ahead of the explicit flags. Keys that name no option of that
// subcommand are errors; options already given on the command line keep
// their command-line value.
std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
    std::size_t sub_at = args.size();
    const CLI::App* sub = nullptr;
    for (std::size_t i = 0; i < args.size() && !sub; ++i) {
        for (const CLI::App* s : app.get_subcommands({}))
            if (args[i] == s->get_name()) {
                sub = s;
                sub_at = i;
            }
    }
    if (!sub) return args;
    std::string path;
    for (std::size_t i = sub_at + 1; i < args.size();) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
        } else {
            ++i;
        }
    }
    if (path.empty()) return args;

    std::vector<const CLI::Option*> given;
    for (std::size_t i = sub_at + 1; i < args.size(); ++i) {
        if (args[i].rfind("--", 0) != 0) continue;
        const std::string name = args[i].substr(0, args[i].find('='));
        if (const CLI::Option* opt = sub->get_option_no_throw(name)) given.push_back(opt);
    }
    std::vector<std::string> injected;
    for (const auto& [key, value] : read_config(path)) {
        const CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (!opt || key == "config" || key == "help")
            throw ConfigError(path + ": unknown key '" + key + "' for " + sub->get_name());
        if (std::find(given.begin(), given.end(), opt) != given.end()) continue;
        if (opt->get_items_expected_max() > 1) {
            injected.push_back("--" + key);
            std::istringstream words(value);
            for (std::string w; words >> w;) injected.push_back(w);
        } else {
            injected.push_back("--" + key + "=" + value);
        }
    }
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_at + 1), injected.begin(), injected.end());
    return args;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-view fiber clustering: synthetic data, training, inference and evaluation", "dmvfc"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", std::string(kVersion));
    std::size_t threads = 0;
    app.add_option("--threads", threads, "Worker threads (0 = all cores)")->envname("DMVFC_THREADS");

    auto make_sub = [&](const char* name, const char* help) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", "Flat `key = value` file of this command's options; flags on the command line win");
        return sub;
    };

    SynthArgs synth;
    CLI::App* synth_cmd = make_sub("synth", "Generate a synthetic bundle with ground-truth labels");
    add_synth_options(synth_cmd, synth);

    PretrainArgs pre;
    CLI::App* pre_cmd = make_sub("pretrain", "Siamese pretraining of one view's encoder");
    add_pretrain_options(pre_cmd, pre);

    FinetuneArgs ft;
    CLI::App* ft_cmd = make_sub("finetune", "Centroid initialisation and collaborative fine-tuning");
    add_finetune_options(ft_cmd, ft);

    InferArgs inf;
    CLI::App* inf_cmd = make_sub("infer", "FA-fused cluster assignment of a bundle");
    add_infer_options(inf_cmd, inf);

    EvalArgs ev;
    CLI::App* ev_cmd = make_sub("eval", "Correlation, alpha and ARI of a labelling");
    ev_cmd->add_option("--bundle", ev.bundle, "Bundle")->required();
    ev_cmd->add_option("--labels", ev.labels, "Labels CSV")->required();
    ev_cmd->add_option("--out", ev.out, "Output JSON (default: stdout)")->group(kOutputs);

    BaselineArgs bl;
    CLI::App* bl_cmd = make_sub("baseline", "QuickBundles clustering");
    bl_cmd->add_option("--bundle", bl.bundle, "Bundle")->required();
    bl_cmd->add_option("--threshold", bl.threshold, "Distance threshold (mm)")->check(CLI::PositiveNumber);
    bl_cmd->add_option("--out", bl.out, "Output labels CSV")->required()->group(kOutputs);

    ConsistencyArgs cs;
    CLI::App* cs_cmd = make_sub("consistency", "Cross-subject representative-pathway distances");
    cs_cmd->add_option("--bundles", cs.bundles, "One bundle per subject")->required()->expected(2, 1 << 20);
    cs_cmd->add_option("--labels", cs.labels, "One labels CSV per subject, same order")->required()->expected(2, 1 << 20);
    cs_cmd->add_option("--out", cs.out, "Output CSV")->required()->group(kOutputs);

    GradcheckArgs gc;
    CLI::App* gc_cmd = make_sub("gradcheck", "Finite-difference check of both encoders and losses");
    gc_cmd->add_option("--instances", gc.instances, "Random instances")->check(CLI::PositiveNumber);
    gc_cmd->add_option("--seed", gc.seed, "Instance seed");
    gc_cmd->add_option("--entries", gc.entries, "Entries sampled per tensor (0 = all)");
    gc_cmd->add_option("--tolerance", gc.tolerance, "Largest accepted relative error");
    gc_cmd->add_option("--out", gc.out, "Output JSON report")->group(kOutputs);

    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        args = expand_config(app, std::move(args));
    } catch (const std::exception& e) {
        err << "dmvfc: " << e.what() << '\n';
        return 2;
    }
    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        std::ostringstream help_out, err_out;
        const int code = app.exit(e, help_out, err_out);
        out << help_out.str();
        err << err_out.str();
        return code;
    }

    set_thread_count(threads);
    retain_heap_memory();

    try {
        if (synth_cmd->parsed()) {
            const Header h{"synth", config_hash(synth_cmd), {{"seed", synth.seed}}};
            const Bundle b = synth_bundle(synth.config, synth.seed);
            if (synth.text) save_bundle_text(b, synth.out);
            else save_bundle(b, synth.out);
            write_sidecar(synth.out, h);
            if (!synth.truth.empty()) save_labels(make_labels(b.truth_labels()), synth.truth, h.line());
            out << "wrote " << b.size() << " fibers to " << synth.out << '\n';
        } else if (pre_cmd->parsed()) {
            const Header h{"pretrain", config_hash(pre_cmd), {{"seed", pre.config.seed}}};
            const Bundle b = load_bundle_any(pre.bundle);
            const View view = parse_view(pre.view);
            const std::filesystem::path target(pre.out);
            auto checkpoint = [&](int epoch, const EncoderWeights& w) {
                if (epoch == pre.config.epochs) return;
                char suffix[32];
                std::snprintf(suffix, sizeof suffix, ".e%04d", epoch);
                const std::string path = (target.parent_path() / (target.stem().string() + suffix + target.extension().string())).string();
                save_weights(w, path);
                write_sidecar(path, h);
            };
            const PretrainResult r = pretrain_view(b, view, pre.config, checkpoint);
            save_weights(r.weights, pre.out);
            write_sidecar(pre.out, h);
            if (!pre.history.empty()) save_pretrain_history(r.history, pre.history, h.line());
            if (!r.history.empty())
                out << "final mean loss " << r.history.back().mean_loss << " after " << r.history.size() << " epochs\n";
        } else if (ft_cmd->parsed()) {
            const Header h{"finetune", config_hash(ft_cmd), {{"seed", ft.config.seed}, {"init_seed", ft.init_seed}}};
            const Bundle b = load_bundle_any(ft.bundle);
            const EncoderWeights geo = load_weights(ft.geo_weights);
            if (ft.geometry_only) {
                ft.config.use_functional = false;
                ft.config.gamma = 0.0;
            }
            EncoderWeights func;
            ad::Matrix z_func;
            if (ft.config.use_functional) {
                if (ft.func_weights.empty()) throw ConfigError("finetune: --func-weights is required unless --geometry-only");
                func = load_weights(ft.func_weights);
                z_func = embed_bundle(func, b);
            }
            const ad::Matrix z_geo = embed_bundle(geo, b);
            const InitMode mode = ft.init == "cross" ? InitMode::CrossView : InitMode::Independent;
            const ClusterModel init = init_centroids(z_geo, z_func, ft.k, ft.init_seed, mode);
            const FinetuneResult r = finetune(b, geo, func, init, ft.config);
            save_weights(r.geo, ft.out_geo);
            write_sidecar(ft.out_geo, h);
            if (ft.config.use_functional && !ft.out_func.empty()) {
                save_weights(r.func, ft.out_func);
                write_sidecar(ft.out_func, h);
            }
            save_model(r.model, ft.out_model);
            write_sidecar(ft.out_model, h);
            if (!ft.history.empty()) save_finetune_history(r.history, ft.history, h.line());
        } else if (inf_cmd->parsed()) {
            const Header h{"infer", config_hash(inf_cmd), {}};
            const Bundle b = load_bundle_any(inf.bundle);
            const EncoderWeights geo = load_weights(inf.geo_weights);
            ClusterModel model = load_model(inf.model);
            inf.config.two_pass = !inf.single_pass;
            const InferenceResult r = infer(b, geo, model, inf.config);
            save_labels(r.labels, inf.labels_out, h.line());
            if (!inf.q_out.empty()) write_matrix_csv(inf.q_out, h, "q_", r.q);
            if (!inf.embeddings_out.empty()) write_matrix_csv(inf.embeddings_out, h, "z_", r.embeddings);
            if (!inf.model_out.empty()) {
                if (!r.fa_reference.empty()) model.fa_reference = r.fa_reference;
                save_model(model, inf.model_out);
                write_sidecar(inf.model_out, h);
            }
        } else if (ev_cmd->parsed()) {
            const Header h{"eval", config_hash(ev_cmd), {}};
            const Bundle b = load_bundle_any(ev.bundle);
            const ClusterLabels labels = load_labels(ev.labels);
            auto j = nlohmann::ordered_json::parse(to_json(evaluate(b, labels)));
            nlohmann::ordered_json doc;
            doc["header"] = h.line();
            for (auto& [key, value] : j.items()) doc[key] = value;
            const std::string text = doc.dump(2) + "\n";
            if (ev.out.empty()) {
                out << text;
            } else {
                std::ofstream f(ev.out);
                if (!f) throw Error("cannot open " + ev.out + " for writing");
                f << text;
            }
        } else if (bl_cmd->parsed()) {
            const Header h{"baseline", config_hash(bl_cmd), {}};
            const Bundle b = load_bundle_any(bl.bundle);
            const ClusterLabels labels = quickbundles(b, bl.threshold);
            save_labels(labels, bl.out, h.line());
            out << labels.k << " clusters\n";
        } else if (cs_cmd->parsed()) {
            const Header h{"consistency", config_hash(cs_cmd), {}};
            if (cs.bundles.size() != cs.labels.size())
                throw ConfigError("consistency: --bundles and --labels need the same number of files");
            std::vector<Bundle> subjects;
            std::vector<ClusterLabels> labels;
            for (std::size_t s = 0; s < cs.bundles.size(); ++s) {
                subjects.push_back(load_bundle_any(cs.bundles[s]));
                labels.push_back(load_labels(cs.labels[s]));
            }
            const ConsistencyReport r = consistency_report(subjects, labels);
            for (int c : r.skipped_clusters) err << "skipped cluster " << c << ": absent in at least one subject\n";
            save_consistency_report(r, cs.out, h.line());
        } else if (gc_cmd->parsed()) {
            const Header h{"gradcheck", config_hash(gc_cmd), {{"seed", gc.seed}}};
            GradCheckOptions opt;
            opt.max_entries = gc.entries;
            const auto suite = run_gradient_suite(gc.instances, gc.seed, opt);
            double worst = 0.0;
            nlohmann::ordered_json doc;
            doc["header"] = h.line();
            char buf[256];
            for (const auto& e : suite) {
                worst = std::max(worst, e.result.max_relative_error);
                std::snprintf(buf, sizeof buf, "%-14s max rel err %.3e  checked %d  skipped at kinks %d  worst %s\n",
                              e.name.c_str(), e.result.max_relative_error, e.result.checked, e.result.non_smooth,
                              e.result.worst.c_str());
                out << buf;
                doc["losses"][e.name] = {{"max_relative_error", e.result.max_relative_error},
                                         {"checked", e.result.checked},
                                         {"non_smooth", e.result.non_smooth},
                                         {"worst", e.result.worst}};
            }
            doc["max_relative_error"] = worst;
            std::snprintf(buf, sizeof buf, "max relative error %.3e (tolerance %.1e)\n", worst, gc.tolerance);
            out << buf;
            if (!gc.out.empty()) {
                std::ofstream f(gc.out);
                if (!f) throw Error("cannot open " + gc.out + " for writing");
                f << doc.dump(2) << '\n';
            }
            if (!(worst < gc.tolerance)) {
                err << "gradcheck: relative error above tolerance\n";
                return 1;
            }
        }
    } catch (const std::exception& e) {
        err << "dmvfc: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace dmvfc::cli
