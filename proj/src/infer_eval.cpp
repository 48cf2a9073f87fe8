#include "dmvfc/infer_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "dmvfc/error.hpp"
#include "dmvfc/parallel.hpp"

namespace dmvfc {

void validate(const InferenceConfig& config) {
    if (!(config.fa_weight >= 0.0) || !std::isfinite(config.fa_weight))
        throw ConfigError("inference: fa_weight must be finite and non-negative");
}

std::vector<int> nearest_fibers(const ad::Matrix& z, const ad::Matrix& centroids) {
    if (z.rows() == 0) throw ShapeMismatch("nearest_fibers: no embeddings");
    std::vector<int> out(static_cast<std::size_t>(centroids.rows()), 0);
    for (Eigen::Index j = 0; j < centroids.rows(); ++j) {
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
            const double d = (z.row(i) - centroids.row(j)).squaredNorm();
            if (d < best) {
                best = d;
                out[static_cast<std::size_t>(j)] = static_cast<int>(i);
            }
        }
    }
    return out;
}

std::vector<FAProfile> fa_references(const Bundle& bundle, const std::vector<int>& labels, int k,
                                     const std::vector<int>& centroid_fibers) {
    if (static_cast<int>(labels.size()) != bundle.size()) throw ShapeMismatch("fa_references: one label per fiber required");
    if (static_cast<int>(centroid_fibers.size()) != k) throw ShapeMismatch("fa_references: one centroid fiber per cluster required");
    const int np = bundle.points_per_fiber();
    std::vector<FAProfile> refs(static_cast<std::size_t>(k));
    parallel_for(static_cast<std::size_t>(k), [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            const auto& anchor = bundle.records.at(static_cast<std::size_t>(centroid_fibers[c]));
            std::vector<double> acc(static_cast<std::size_t>(np), 0.0);
            int count = 0;
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (labels[i] != static_cast<int>(c)) continue;
                const auto& rec = bundle.records[i];
                const bool flip = mdf_prefers_flip(anchor.fiber, rec.fiber);
                for (int p = 0; p < np; ++p)
                    acc[static_cast<std::size_t>(p)] += rec.fa.values[static_cast<std::size_t>(flip ? np - 1 - p : p)];
                ++count;
            }
            if (count == 0) {
                refs[c] = anchor.fa;
                continue;
            }
            refs[c].values.resize(static_cast<std::size_t>(np));
            for (int p = 0; p < np; ++p)
                refs[c].values[static_cast<std::size_t>(p)] = static_cast<float>(acc[static_cast<std::size_t>(p)] / count);
        }
    });
    return refs;
}

InferenceResult infer(const Bundle& bundle, const EncoderWeights& geo, const ClusterModel& model,
                      const InferenceConfig& config) {
    validate(config);
    validate(bundle);
    if (geo.view != View::Geometric) throw ConfigError("infer: weights are not a geometric encoder");
    if (model.k < 1 || model.centroids_geo.rows() != model.k) throw ShapeMismatch("infer: model has no geometric centroids");
    if (model.centroids_geo.cols() != geo.embed_dim) throw ShapeMismatch("infer: centroid and embedding dimensions differ");

    InferenceResult out;
    out.embeddings = embed_bundle(geo, bundle);
    const ad::Matrix q1 = soft_assign(out.embeddings, model.centroids_geo);
    out.provisional = argmax_rows(q1);
    out.centroid_fibers = nearest_fibers(out.embeddings, model.centroids_geo);
    if (config.fa_weight == 0.0) {
        out.q = q1;
        out.labels = ClusterLabels{out.provisional, model.k};
        return out;
    }

    if (config.two_pass) {
        out.fa_reference = fa_references(bundle, out.provisional, model.k, out.centroid_fibers);
    } else {
        if (static_cast<int>(model.fa_reference.size()) != model.k)
            throw ConfigError("infer: single-pass mode needs FA references stored in the model");
        out.fa_reference = model.fa_reference;
        for (const auto& r : out.fa_reference)
            if (r.size() != bundle.points_per_fiber()) throw ShapeMismatch("infer: stored FA reference length differs from bundle");
    }

    const auto n = static_cast<Eigen::Index>(bundle.size());
    ad::Matrix sq(n, model.k);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            for (int j = 0; j < model.k; ++j) {
                const double d = (out.embeddings.row(row) - model.centroids_geo.row(j)).norm() +
                                 config.fa_weight * fa_manhattan(bundle.records[i].fa, out.fa_reference[static_cast<std::size_t>(j)]);
                sq(row, j) = d * d;
            }
        }
    });
    out.q = soft_assign_sq(sq);
    out.labels = ClusterLabels{argmax_rows(out.q), model.k};
    return out;
}

int representative_pathway(const Bundle& bundle, const ClusterLabels& labels, int cluster) {
    if (labels.size() != bundle.size()) throw ShapeMismatch("representative_pathway: one label per fiber required");
    std::vector<int> members;
    for (int i = 0; i < labels.size(); ++i)
        if (labels.labels[static_cast<std::size_t>(i)] == cluster) members.push_back(i);
    if (members.empty()) throw DegenerateInput("representative_pathway: cluster " + std::to_string(cluster) + " is empty");
    if (members.size() == 1) return members.front();

    const std::size_t m = members.size();
    std::vector<double> total(m, 0.0);
    // Row i accumulates the upper triangle only; mirrored afterwards so the
    // sums do not depend on the thread split.
    std::vector<std::vector<double>> corr(m);
    parallel_for(m, [&](std::size_t begin, std::size_t end) {
        for (std::size_t a = begin; a < end; ++a) {
            corr[a].resize(m - a - 1);
            for (std::size_t b = a + 1; b < m; ++b)
                corr[a][b - a - 1] = endpoint_correlation(bundle.records[static_cast<std::size_t>(members[a])].bold,
                                                          bundle.records[static_cast<std::size_t>(members[b])].bold);
        }
    });
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = a + 1; b < m; ++b) {
            total[a] += corr[a][b - a - 1];
            total[b] += corr[a][b - a - 1];
        }
    std::size_t best = 0;
    for (std::size_t a = 1; a < m; ++a)
        if (total[a] > total[best]) best = a;
    return members[best];
}

namespace {

// Mean pairwise Hausdorff over index pairs of one subject, or NaN with < 2 fibers.
double mean_pairwise_hausdorff(const Bundle& bundle, const std::vector<int>& idx) {
    const std::size_t m = idx.size();
    if (m < 2) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> row(m, 0.0);
    parallel_for(m, [&](std::size_t begin, std::size_t end) {
        for (std::size_t a = begin; a < end; ++a)
            for (std::size_t b = a + 1; b < m; ++b)
                row[a] += hausdorff(bundle.records[static_cast<std::size_t>(idx[a])].fiber,
                                    bundle.records[static_cast<std::size_t>(idx[b])].fiber);
    });
    double sum = 0.0;
    for (double r : row) sum += r;
    return sum / (static_cast<double>(m) * static_cast<double>(m - 1) / 2.0);
}

}  // namespace

ConsistencyReport consistency_report(const std::vector<Bundle>& subjects, const std::vector<ClusterLabels>& labels) {
    if (subjects.size() < 2) throw ConfigError("consistency_report: need at least 2 subjects");
    if (labels.size() != subjects.size()) throw ShapeMismatch("consistency_report: one labelling per subject required");
    int k = 0;
    for (std::size_t s = 0; s < subjects.size(); ++s) {
        if (labels[s].size() != subjects[s].size())
            throw ShapeMismatch("consistency_report: subject " + std::to_string(s) + " labels do not match its bundle");
        k = std::max(k, labels[s].k);
    }

    ConsistencyReport report;
    std::vector<std::vector<std::vector<int>>> members(subjects.size());
    for (std::size_t s = 0; s < subjects.size(); ++s) {
        members[s].assign(static_cast<std::size_t>(k), {});
        for (int i = 0; i < labels[s].size(); ++i) members[s][static_cast<std::size_t>(labels[s].labels[static_cast<std::size_t>(i)])].push_back(i);
    }

    double pathway_sum = 0.0, intra_sum = 0.0;
    int intra_count = 0;
    for (int c = 0; c < k; ++c) {
        bool present = true;
        for (const auto& m : members) present = present && !m[static_cast<std::size_t>(c)].empty();
        if (!present) {
            report.skipped_clusters.push_back(c);
            continue;
        }
        std::vector<int> rep(subjects.size());
        for (std::size_t s = 0; s < subjects.size(); ++s) {
            rep[s] = representative_pathway(subjects[s], labels[s], c);
            const double intra = mean_pairwise_hausdorff(subjects[s], members[s][static_cast<std::size_t>(c)]);
            if (!std::isnan(intra)) {
                intra_sum += intra;
                ++intra_count;
            }
        }
        for (std::size_t a = 0; a < subjects.size(); ++a)
            for (std::size_t b = a + 1; b < subjects.size(); ++b) {
                const double d = hausdorff(subjects[a].records[static_cast<std::size_t>(rep[a])].fiber,
                                           subjects[b].records[static_cast<std::size_t>(rep[b])].fiber);
                report.rows.push_back({c, static_cast<int>(a), static_cast<int>(b), d});
                pathway_sum += d;
            }
    }
    if (!report.rows.empty()) report.mean_pathway = pathway_sum / static_cast<double>(report.rows.size());
    report.mean_intra_cluster = intra_count > 0 ? intra_sum / intra_count : std::numeric_limits<double>::quiet_NaN();

    double bundle_sum = 0.0;
    int bundle_count = 0;
    for (const auto& subject : subjects) {
        std::vector<int> all(static_cast<std::size_t>(subject.size()));
        for (int i = 0; i < subject.size(); ++i) all[static_cast<std::size_t>(i)] = i;
        const double d = mean_pairwise_hausdorff(subject, all);
        if (!std::isnan(d)) {
            bundle_sum += d;
            ++bundle_count;
        }
    }
    report.mean_bundle = bundle_count > 0 ? bundle_sum / bundle_count : std::numeric_limits<double>::quiet_NaN();
    return report;
}

void save_consistency_report(const ConsistencyReport& report, const std::filesystem::path& path,
                             const std::string& comment) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    if (!comment.empty()) out << "# " << comment << '\n';
    for (int c : report.skipped_clusters) out << "# skipped cluster " << c << " (absent in at least one subject)\n";
    out << "cluster_id,subj_a,subj_b,pathway_hausdorff\n";
    char buf[160];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof buf, "%d,%d,%d,%.10g\n", r.cluster, r.subject_a, r.subject_b, r.pathway_hausdorff);
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "mean_pathway,,,%.10g\nmean_intra_cluster,,,%.10g\nmean_bundle,,,%.10g\n",
                  report.mean_pathway, report.mean_intra_cluster, report.mean_bundle);
    out << buf;
}

EvalReport evaluate(const Bundle& bundle, const ClusterLabels& labels) {
    if (labels.size() != bundle.size()) throw ShapeMismatch("evaluate: one label per fiber required");
    EvalReport report;
    report.corr = intra_cluster_correlation(bundle, labels);
    report.alpha = alpha_measure(bundle, labels);
    if (bundle.has_labels()) report.ari = adjusted_rand_index(bundle.truth_labels(), labels.labels);
    for (const auto& m : labels.members())
        if (!m.empty()) ++report.n_clusters_nonempty;
    return report;
}

std::string to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["corr"] = report.corr.mean;
    auto per_corr = nlohmann::ordered_json::array();
    for (double c : report.corr.per_cluster) {
        if (std::isnan(c)) per_corr.push_back(nullptr);
        else per_corr.push_back(c);
    }
    j["corr_per_cluster"] = per_corr;
    j["alpha_mean"] = report.alpha.mean;
    j["alpha_per_cluster"] = report.alpha.per_cluster;
    if (report.ari) j["ari"] = *report.ari;
    else j["ari"] = nullptr;
    j["n_clusters_nonempty"] = report.n_clusters_nonempty;
    return j.dump(2);
}

}  // namespace dmvfc
