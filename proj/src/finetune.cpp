#include "dmvfc/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

#include "binary_io.hpp"
#include "dmvfc/error.hpp"
#include "dmvfc/optim.hpp"
#include "dmvfc/parallel.hpp"
#include "dmvfc/pretrain.hpp"
#include "dmvfc/random.hpp"

namespace dmvfc {

namespace {

double sq_dist_row(const ad::Matrix& a, Eigen::Index i, const ad::Matrix& b, Eigen::Index j) {
    return (a.row(i) - b.row(j)).squaredNorm();
}

int nearest_row(const ad::Matrix& data, const ad::Matrix& means, Eigen::Index j) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        const double d = sq_dist_row(data, i, means, j);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(i);
        }
    }
    return best;
}

}  // namespace

KMeansResult kmeans(const ad::Matrix& data, int k, std::uint64_t seed, int max_iterations, double tol) {
    const auto n = data.rows();
    if (k < 1) throw ConfigError("kmeans: k must be positive");
    if (k > n) throw ConfigError("kmeans: k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " points");
    std::mt19937_64 rng(seed);

    // k-means++ seeding.
    KMeansResult out;
    out.means.resize(k, data.cols());
    std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    std::vector<char> chosen(static_cast<std::size_t>(n), 0);
    Eigen::Index pick = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
    for (int c = 0; c < k; ++c) {
        if (c > 0) {
            double total = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) total += d2[static_cast<std::size_t>(i)];
            if (total > 0.0) {
                double r = std::uniform_real_distribution<double>(0.0, total)(rng);
                pick = n - 1;
                for (Eigen::Index i = 0; i < n; ++i) {
                    r -= d2[static_cast<std::size_t>(i)];
                    if (r < 0.0 && d2[static_cast<std::size_t>(i)] > 0.0) {
                        pick = i;
                        break;
                    }
                }
                while (chosen[static_cast<std::size_t>(pick)] && pick > 0) --pick;
            } else {
                // All remaining points coincide with a centre: take the first unused one.
                pick = 0;
                while (pick < n - 1 && chosen[static_cast<std::size_t>(pick)]) ++pick;
            }
        }
        chosen[static_cast<std::size_t>(pick)] = 1;
        out.means.row(c) = data.row(pick);
        for (Eigen::Index i = 0; i < n; ++i)
            d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], sq_dist_row(data, i, out.means, c));
    }

    out.labels.assign(static_cast<std::size_t>(n), 0);
    std::vector<double> dist(static_cast<std::size_t>(n));
    for (int iter = 1; iter <= max_iterations; ++iter) {
        out.iterations = iter;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = sq_dist_row(data, i, out.means, c);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            out.labels[static_cast<std::size_t>(i)] = best;
            dist[static_cast<std::size_t>(i)] = best_d;
        }
        ad::Matrix sums = ad::Matrix::Zero(k, data.cols());
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int c = out.labels[static_cast<std::size_t>(i)];
            sums.row(c) += data.row(i);
            ++counts[static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) continue;
            // Re-seed from the point farthest from its centre.
            Eigen::Index far = -1;
            for (Eigen::Index i = 0; i < n; ++i)
                if (counts[static_cast<std::size_t>(out.labels[static_cast<std::size_t>(i)])] > 1 &&
                    (far < 0 || dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)]))
                    far = i;
            if (far < 0) continue;
            const int from = out.labels[static_cast<std::size_t>(far)];
            sums.row(from) -= data.row(far);
            --counts[static_cast<std::size_t>(from)];
            sums.row(c) = data.row(far);
            counts[static_cast<std::size_t>(c)] = 1;
            out.labels[static_cast<std::size_t>(far)] = c;
            dist[static_cast<std::size_t>(far)] = 0.0;
        }
        double shift = 0.0;
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] == 0) continue;
            const Eigen::RowVectorXd m = sums.row(c) / counts[static_cast<std::size_t>(c)];
            shift = std::max(shift, (m - out.means.row(c)).norm());
            out.means.row(c) = m;
        }
        if (shift < tol) break;
    }
    // Final assignment against the final means.
    for (Eigen::Index i = 0; i < n; ++i) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            const double d = sq_dist_row(data, i, out.means, c);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        out.labels[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

ClusterModel init_centroids(const ad::Matrix& geo, const ad::Matrix& func, int k, std::uint64_t seed, InitMode mode) {
    const auto n = geo.rows();
    if (k < 1) throw ConfigError("init_centroids: K must be positive");
    if (k > n) throw ConfigError("init_centroids: K = " + std::to_string(k) + " exceeds N = " + std::to_string(n));
    if (func.rows() != 0 && func.rows() != n) throw ShapeMismatch("init_centroids: views are not row-aligned");

    ClusterModel model;
    model.k = k;
    const auto geo_km = kmeans(geo, k, seed);
    model.centroids_geo = geo_km.means;
    model.centroid_fiber_indices.resize(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) model.centroid_fiber_indices[static_cast<std::size_t>(c)] = nearest_row(geo, geo_km.means, c);

    if (func.rows() == 0) return model;
    if (mode == InitMode::CrossView) {
        model.centroids_func.resize(k, func.cols());
        for (int c = 0; c < k; ++c) model.centroids_func.row(c) = func.row(model.centroid_fiber_indices[static_cast<std::size_t>(c)]);
    } else {
        model.centroids_func = kmeans(func, k, seed).means;
    }
    return model;
}

ad::Matrix soft_assign_sq(const ad::Matrix& sq) {
    ad::Matrix q = (sq.array() + 1.0).inverse();
    const Eigen::VectorXd rows = q.rowwise().sum();
    q.array().colwise() /= rows.array();
    return q;
}

ad::Matrix soft_assign(const ad::Matrix& z, const ad::Matrix& centroids) {
    if (z.cols() != centroids.cols()) throw ShapeMismatch("soft_assign: embedding and centroid dimensions differ");
    if (centroids.rows() == 0) throw ShapeMismatch("soft_assign: no centroids");
    ad::Matrix sq(z.rows(), centroids.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index j = 0; j < centroids.rows(); ++j) sq(i, j) = sq_dist_row(z, i, centroids, j);
    return soft_assign_sq(sq);
}

ad::Var soft_assign(const ad::Var& z, const ad::Var& centroids) {
    const ad::Var kernel = ad::reciprocal(ad::add_scalar(ad::sq_dist(z, centroids), 1.0));
    return ad::div_rows(kernel, ad::row_sum(kernel));
}

ad::Matrix target_distribution(const ad::Matrix& q) {
    const Eigen::RowVectorXd freq = q.colwise().sum();
    if ((freq.array() <= 0.0).any()) throw DegenerateInput("target_distribution: a cluster has zero total mass");
    ad::Matrix p = q.array().square().rowwise() / freq.array();
    const Eigen::VectorXd rows = p.rowwise().sum();
    p.array().colwise() /= rows.array();
    return p;
}

double kl_loss(const ad::Matrix& p, const ad::Matrix& q) {
    if (p.rows() != q.rows() || p.cols() != q.cols()) throw ShapeMismatch("kl_loss: P and Q shapes differ");
    double total = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double pi = p.data()[i];
        if (pi <= 0.0) continue;
        const double qi = q.data()[i];
        if (!(qi > 0.0)) throw DegenerateInput("kl_loss: Q has a non-positive entry where P is positive");
        total += pi * std::log(pi / qi);
    }
    return total;
}

ad::Var kl_loss(const ad::Matrix& p, const ad::Var& q) {
    if (p.rows() != q.rows() || p.cols() != q.cols()) throw ShapeMismatch("kl_loss: P and Q shapes differ");
    double entropy_term = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if (p.data()[i] > 0.0) entropy_term += p.data()[i] * std::log(p.data()[i]);
    // sum p log p - sum p log q
    const ad::Var cross = ad::sum(ad::mul(ad::constant(p), ad::log(q)));
    return ad::add_scalar(ad::scale(cross, -1.0), entropy_term);
}

std::vector<int> argmax_rows(const ad::Matrix& q) {
    std::vector<int> out(static_cast<std::size_t>(q.rows()));
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        Eigen::Index j = 0;
        q.row(i).maxCoeff(&j);
        out[static_cast<std::size_t>(i)] = static_cast<int>(j);
    }
    return out;
}

void validate(const FinetuneConfig& c) {
    if (c.epochs < 0) throw ConfigError("finetune: epochs must be non-negative");
    if (!(c.lr > 0.0)) throw ConfigError("finetune: learning rate must be positive");
    if (c.gamma < 0.0) throw ConfigError("finetune: gamma must be non-negative");
    if (c.batch < 1) throw ConfigError("finetune: batch must be positive");
    if (c.pairs_per_epoch < 0) throw ConfigError("finetune: pairs_per_epoch must be non-negative");
}

View guide_view(int epoch, bool use_functional) {
    if (!use_functional) return View::Geometric;
    return epoch % 2 == 1 ? View::Geometric : View::Functional;
}

ViewLoss finetune_view_loss(const EncoderWeights& weights, const ad::Var& centroids, const Bundle& bundle,
                            const std::vector<int>& fibers, const std::vector<std::pair<int, int>>& pairs,
                            const std::vector<double>& pair_labels, const ad::Matrix& target_rows, double gamma) {
    if (pairs.size() != pair_labels.size()) throw ShapeMismatch("finetune_view_loss: one label per pair required");
    if (target_rows.rows() != static_cast<Eigen::Index>(fibers.size()))
        throw ShapeMismatch("finetune_view_loss: one target row per fiber required");
    ViewLoss out;
    const ad::Var z = encode(weights, bundle, fibers);

    ad::Var siamese;
    if (!pairs.empty()) {
        std::vector<int> left, right;
        ad::Matrix s(static_cast<Eigen::Index>(pairs.size()), 1);
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            left.push_back(pairs[k].first);
            right.push_back(pairs[k].second);
            s(static_cast<Eigen::Index>(k), 0) = pair_labels[k];
        }
        siamese = siamese_loss(ad::gather_rows(z, left), ad::gather_rows(z, right), s);
        out.siamese = siamese.item();
    }

    if (gamma > 0.0) {
        const ad::Var cluster = kl_loss(target_rows, soft_assign(z, centroids));
        out.cluster = cluster.item();
        const ad::Var weighted = ad::scale(cluster, gamma);
        out.total = siamese.defined() ? ad::add(siamese, weighted) : weighted;
    } else {
        out.cluster = kl_loss(target_rows, soft_assign(z.value(), centroids.value()));
        out.total = siamese.defined() ? siamese : ad::scale(ad::sum(z), 0.0);
    }
    return out;
}

FinetuneResult finetune(const Bundle& bundle, const EncoderWeights& geo, const EncoderWeights& func,
                        const ClusterModel& model, const FinetuneConfig& config, const FinetuneObserver& observer) {
    validate(config);
    validate(bundle);
    if (geo.view != View::Geometric) throw ConfigError("finetune: first encoder must be geometric");
    const bool use_func = config.use_functional;
    if (use_func && (func.view != View::Functional || !model.has_functional()))
        throw ConfigError("finetune: functional view requested but no functional encoder/centroids supplied");
    if (model.centroids_geo.rows() != model.k || model.k < 1) throw ShapeMismatch("finetune: malformed cluster model");

    FinetuneResult result{geo.clone(), use_func ? func.clone() : func, model, {}};
    if (config.epochs == 0) return result;
    const int n = bundle.size();
    if (n < 2) throw ShapeMismatch("finetune: need at least 2 fibers");

    ad::Var mu_geo = ad::parameter(model.centroids_geo);
    ad::Var mu_func = use_func ? ad::parameter(model.centroids_func) : ad::Var{};

    auto geo_params = result.geo.params;
    auto geo_names = result.geo.names;
    geo_params.push_back(mu_geo);
    geo_names.push_back("centroids_geo");
    Adam adam_geo(geo_params, geo_names);

    std::optional<Adam> adam_func;
    if (use_func) {
        auto params = result.func.params;
        auto names = result.func.names;
        params.push_back(mu_func);
        names.push_back("centroids_func");
        adam_func.emplace(params, names);
    }

    const PseudoLabeler geo_labels(bundle, View::Geometric);
    std::optional<PseudoLabeler> func_labels;
    if (use_func) func_labels.emplace(bundle, View::Functional);

    std::mt19937_64 rng(derive_seed(config.seed, 7));
    const int pairs_total = config.pairs_per_epoch > 0 ? config.pairs_per_epoch : n;
    const int steps = (n + config.batch - 1) / config.batch;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const View guide = guide_view(epoch, use_func);
        const ad::Matrix q_geo = soft_assign(embed_bundle(result.geo, bundle), mu_geo.value());
        ad::Matrix q_func;
        if (use_func) q_func = soft_assign(embed_bundle(result.func, bundle), mu_func.value());
        const ad::Matrix p = target_distribution(guide == View::Geometric ? q_geo : q_func);

        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        FinetuneEpoch record;
        record.epoch = epoch;
        record.guide = guide;
        for (int step = 0; step < steps; ++step) {
            const int begin = step * n / steps;
            const int end = (step + 1) * n / steps;
            std::vector<int> fibers(order.begin() + begin, order.begin() + end);
            const auto m = static_cast<int>(fibers.size());

            // Pairs drawn uniformly within the step's fibers; the epoch's pair
            // budget is split across steps in proportion to batch size.
            const int pair_count = static_cast<int>(static_cast<long long>(pairs_total) * end / n -
                                                    static_cast<long long>(pairs_total) * begin / n);
            std::vector<std::pair<int, int>> pairs;
            if (m >= 2) {
                std::uniform_int_distribution<int> first(0, m - 1), second(0, m - 2);
                for (int k = 0; k < pair_count; ++k) {
                    int a = first(rng), b = second(rng);
                    if (b >= a) ++b;
                    pairs.emplace_back(a, b);
                }
            }
            std::vector<double> s_geo(pairs.size()), s_func(use_func ? pairs.size() : 0);
            parallel_for(pairs.size(), [&](std::size_t lo, std::size_t hi) {
                for (std::size_t k = lo; k < hi; ++k) {
                    const int a = fibers[static_cast<std::size_t>(pairs[k].first)];
                    const int b = fibers[static_cast<std::size_t>(pairs[k].second)];
                    s_geo[k] = geo_labels.label(a, b);
                    if (use_func) s_func[k] = func_labels->label(a, b);
                }
            });

            ad::Matrix target(m, p.cols());
            for (int r = 0; r < m; ++r) target.row(r) = p.row(fibers[static_cast<std::size_t>(r)]);

            auto run_view = [&](const EncoderWeights& w, ad::Var& mu, Adam& adam, const std::vector<double>& labels,
                                double& ls, double& lc) {
                adam.zero_grad();
                ViewLoss vl = finetune_view_loss(w, mu, bundle, fibers, pairs, labels, target, config.gamma);
                if (!std::isfinite(vl.total.item()))
                    throw NumericalError("finetune (" + std::string(view_name(w.view)) + "): non-finite loss at epoch " +
                                         std::to_string(epoch) + ", step " + std::to_string(step) +
                                         " (L_s=" + std::to_string(vl.siamese) + ", L_c=" + std::to_string(vl.cluster) + ")");
                ls += vl.siamese;
                lc += vl.cluster;
                vl.total.backward();
                adam.step(config.lr);
            };
            run_view(result.geo, mu_geo, adam_geo, s_geo, record.ls_geo, record.lc_geo);
            if (use_func) run_view(result.func, mu_func, *adam_func, s_func, record.ls_func, record.lc_func);
        }
        result.history.push_back(record);
        if (observer) {
            result.model.centroids_geo = mu_geo.value();
            if (use_func) result.model.centroids_func = mu_func.value();
            observer(record, result);
        }
    }

    adam_geo.zero_grad();
    if (adam_func) adam_func->zero_grad();
    result.model.centroids_geo = mu_geo.value();
    if (use_func) result.model.centroids_func = mu_func.value();
    return result;
}

void save_model(const ClusterModel& model, const std::filesystem::path& path) {
    if (model.k < 1 || model.centroids_geo.rows() != model.k) throw ShapeMismatch("save_model: malformed model");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    detail::BinaryWriter w(out);
    w.magic("DMCM");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(model.k));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(model.centroids_geo.cols()));
    const bool has_func = model.has_functional();
    w.put<std::uint8_t>(has_func ? 1 : 0);
    for (Eigen::Index i = 0; i < model.centroids_geo.size(); ++i)
        w.put<float>(static_cast<float>(model.centroids_geo.data()[i]));
    if (has_func)
        for (Eigen::Index i = 0; i < model.centroids_func.size(); ++i)
            w.put<float>(static_cast<float>(model.centroids_func.data()[i]));
    for (int c = 0; c < model.k; ++c)
        w.put<std::int32_t>(c < static_cast<int>(model.centroid_fiber_indices.size())
                                ? model.centroid_fiber_indices[static_cast<std::size_t>(c)]
                                : -1);
    const bool has_fa = static_cast<int>(model.fa_reference.size()) == model.k;
    w.put<std::uint8_t>(has_fa ? 1 : 0);
    if (has_fa) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(model.fa_reference.front().size()));
        for (const auto& fa : model.fa_reference)
            for (float v : fa.values) w.put<float>(v);
    }
    if (!out) throw Error("write failed for " + path.string());
}

ClusterModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    detail::BinaryReader r(in, path.string());
    r.expect_magic("DMCM");
    ClusterModel m;
    m.k = static_cast<int>(r.get<std::uint32_t>("header"));
    const auto dim = r.get<std::uint32_t>("header");
    if (m.k < 1 || m.k > 1000000 || dim != kEmbedDim) throw ParseError(path.string() + ": bad model header");
    const auto has_func = r.get<std::uint8_t>("header");
    auto read_matrix = [&](ad::Matrix& mat, const char* what) {
        mat.resize(m.k, dim);
        for (Eigen::Index i = 0; i < mat.size(); ++i) {
            const float v = r.get<float>(what);
            if (!std::isfinite(v)) throw ParseError(path.string() + ": non-finite value in " + what);
            mat.data()[i] = v;
        }
    };
    read_matrix(m.centroids_geo, "geometric centroids");
    if (has_func) read_matrix(m.centroids_func, "functional centroids");
    m.centroid_fiber_indices.resize(static_cast<std::size_t>(m.k));
    for (auto& idx : m.centroid_fiber_indices) idx = r.get<std::int32_t>("centroid indices");
    if (r.get<std::uint8_t>("FA flag")) {
        const auto n_p = r.get<std::uint32_t>("FA references");
        m.fa_reference.resize(static_cast<std::size_t>(m.k));
        for (auto& fa : m.fa_reference) {
            fa.values.resize(n_p);
            for (auto& v : fa.values) v = r.get<float>("FA references");
        }
    }
    if (!r.at_end()) throw ParseError(path.string() + ": trailing bytes");
    return m;
}

void save_finetune_history(const std::vector<FinetuneEpoch>& history, const std::filesystem::path& path,
                           const std::string& comment) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "epoch,ls_geo,ls_func,lc_geo,lc_func,guide_view\n";
    char buf[256];
    for (const auto& h : history) {
        std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%s\n", h.epoch, h.ls_geo, h.ls_func, h.lc_geo,
                      h.lc_func, view_name(h.guide));
        out << buf;
    }
}

}  // namespace dmvfc
