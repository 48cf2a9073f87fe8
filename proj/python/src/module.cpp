#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dmvfc/error.hpp"
#include "dmvfc/finetune.hpp"
#include "dmvfc/infer_eval.hpp"
#include "dmvfc/metrics.hpp"
#include "dmvfc/parallel.hpp"
#include "dmvfc/pretrain.hpp"
#include "dmvfc/version.hpp"

namespace py = pybind11;
using namespace dmvfc;

namespace {

Fiber to_fiber(const Eigen::Ref<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>& points) {
    return Fiber{points.cast<float>()};
}

View view_arg(const std::string& name) { return parse_view(name); }

}  // namespace

PYBIND11_MODULE(_dmvfc, m) {
    m.doc() = "Multi-view fiber clustering: synthetic data, training, inference and evaluation.";
    m.attr("__version__") = kVersion;
    retain_heap_memory();

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<ShapeMismatch>(m, "ShapeMismatch", base.ptr());
    py::register_exception<DegenerateInput>(m, "DegenerateInput", base.ptr());
    py::register_exception<ParseError>(m, "ParseError", base.ptr());
    py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

    m.def("set_threads", [](std::size_t n) { set_thread_count(n); }, py::arg("n"));

    py::class_<Bundle>(m, "Bundle")
        .def_property_readonly("name", [](const Bundle& b) { return b.name; })
        .def("__len__", &Bundle::size)
        .def("truth_labels", &Bundle::truth_labels)
        .def("fiber", [](const Bundle& b, int i) -> Eigen::MatrixXd {
            return b.records.at(static_cast<std::size_t>(i)).fiber.points.cast<double>();
        })
        .def("bold", [](const Bundle& b, int i) {
            const auto& bold = b.records.at(static_cast<std::size_t>(i)).bold;
            return py::make_tuple(bold.endpoint_a, bold.endpoint_b);
        })
        .def("fa", [](const Bundle& b, int i) { return b.records.at(static_cast<std::size_t>(i)).fa.values; });

    m.def(
        "synth",
        [](int groups, int subgroups, int fibers, std::uint64_t seed, double subgroup_offset, double sigma_rotation,
           double sigma_shift, double sigma_bold, double group_separation, double fa_group_step) {
            SynthConfig c;
            c.groups = groups;
            c.subgroups = subgroups;
            c.fibers = fibers;
            c.subgroup_offset = subgroup_offset;
            c.sigma_rotation = sigma_rotation;
            c.sigma_shift = sigma_shift;
            c.sigma_bold = sigma_bold;
            c.group_separation = group_separation;
            c.fa_group_step = fa_group_step;
            return synth_bundle(c, seed);
        },
        py::arg("groups") = 4, py::arg("subgroups") = 2, py::arg("fibers") = 400, py::arg("seed") = 1,
        py::arg("subgroup_offset") = 0.0, py::arg("sigma_rotation") = 0.0, py::arg("sigma_shift") = 0.0,
        py::arg("sigma_bold") = 0.5, py::arg("group_separation") = 10.0, py::arg("fa_group_step") = 0.1);
    m.def("jitter_copy", &jitter_copy, py::arg("bundle"), py::arg("sigma"), py::arg("seed"));
    m.def("load_bundle", &load_bundle, py::arg("path"));
    m.def("save_bundle", &save_bundle, py::arg("bundle"), py::arg("path"));

    m.def("mdf", [](const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>& a,
                    const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>& b) {
        return mdf(to_fiber(a), to_fiber(b));
    });
    m.def("hausdorff", [](const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>& a,
                          const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>& b) {
        return hausdorff(to_fiber(a), to_fiber(b));
    });
    m.def(
        "pairwise_distance",
        [](const Bundle& b, const std::string& kernel) -> Eigen::MatrixXd {
            if (kernel != "mdf" && kernel != "hausdorff") throw ConfigError("kernel must be 'mdf' or 'hausdorff'");
            return pairwise_distance(b, kernel == "mdf" ? FiberKernel::Mdf : FiberKernel::Hausdorff).data;
        },
        py::arg("bundle"), py::arg("kernel") = "mdf");
    m.def("adjusted_rand_index", &adjusted_rand_index, py::arg("a"), py::arg("b"));
    m.def(
        "quickbundles", [](const Bundle& b, double threshold) { return quickbundles(b, threshold).labels; },
        py::arg("bundle"), py::arg("threshold") = 2.0);

    py::class_<EncoderWeights>(m, "EncoderWeights")
        .def_property_readonly("view", [](const EncoderWeights& w) { return std::string(view_name(w.view)); })
        .def_property_readonly("parameter_count", &EncoderWeights::parameter_count);
    m.def("load_weights", &load_weights, py::arg("path"));
    m.def("save_weights", &save_weights, py::arg("weights"), py::arg("path"));

    m.def(
        "pretrain",
        [](const Bundle& b, const std::string& view, int epochs, int batch, int pairs, std::uint64_t seed) {
            PretrainConfig c;
            c.epochs = epochs;
            c.batch = batch;
            c.pairs_per_epoch = pairs;
            c.seed = seed;
            c.checkpoint_every = 0;
            py::gil_scoped_release release;
            const PretrainResult r = pretrain_view(b, view_arg(view), c);
            std::vector<double> losses;
            for (const auto& e : r.history) losses.push_back(e.mean_loss);
            return std::make_pair(r.weights, losses);
        },
        py::arg("bundle"), py::arg("view"), py::arg("epochs") = 50, py::arg("batch") = 64, py::arg("pairs") = 0,
        py::arg("seed") = 1, "Returns (weights, per-epoch mean loss).");
    m.def("embed", [](const EncoderWeights& w, const Bundle& b) { return embed_bundle(w, b); }, py::arg("weights"),
          py::arg("bundle"));

    py::class_<ClusterModel>(m, "ClusterModel")
        .def_readonly("k", &ClusterModel::k)
        .def_readonly("centroids_geo", &ClusterModel::centroids_geo)
        .def_readonly("centroids_func", &ClusterModel::centroids_func)
        .def_readonly("centroid_fiber_indices", &ClusterModel::centroid_fiber_indices);
    m.def("load_model", &load_model, py::arg("path"));
    m.def("save_model", &save_model, py::arg("model"), py::arg("path"));
    m.def(
        "init_centroids",
        [](const ad::Matrix& geo, const std::optional<ad::Matrix>& func, int k, std::uint64_t seed, bool independent) {
            return init_centroids(geo, func.value_or(ad::Matrix()), k, seed,
                                  independent ? InitMode::Independent : InitMode::CrossView);
        },
        py::arg("geo"), py::arg("func") = py::none(), py::arg("k") = 8, py::arg("seed") = 3,
        py::arg("independent") = false);
    m.def("soft_assign", py::overload_cast<const ad::Matrix&, const ad::Matrix&>(&soft_assign), py::arg("z"),
          py::arg("centroids"));
    m.def("target_distribution", &target_distribution, py::arg("q"));
    m.def("kl_loss", py::overload_cast<const ad::Matrix&, const ad::Matrix&>(&kl_loss), py::arg("p"), py::arg("q"));

    m.def(
        "finetune",
        [](const Bundle& b, const EncoderWeights& geo, const std::optional<EncoderWeights>& func,
           const ClusterModel& model, int epochs, double lr, double gamma, int batch, std::uint64_t seed) {
            FinetuneConfig c;
            c.epochs = epochs;
            c.lr = lr;
            c.gamma = gamma;
            c.batch = batch;
            c.seed = seed;
            c.use_functional = func.has_value();
            FinetuneResult r;
            {
                py::gil_scoped_release release;
                r = finetune(b, geo, func.value_or(EncoderWeights{}), model, c);
            }
            return py::make_tuple(r.geo, r.func, r.model);
        },
        py::arg("bundle"), py::arg("geo"), py::arg("func"), py::arg("model"), py::arg("epochs") = 20,
        py::arg("lr") = 1e-5, py::arg("gamma") = 0.1, py::arg("batch") = 1024, py::arg("seed") = 2,
        "Returns (geo weights, functional weights, model). Pass func=None for geometry-only.");

    m.def(
        "infer",
        [](const Bundle& b, const EncoderWeights& geo, const ClusterModel& model, double fa_weight) {
            const InferenceResult r = infer(b, geo, model, {.fa_weight = fa_weight});
            return py::make_tuple(r.labels.labels, r.q);
        },
        py::arg("bundle"), py::arg("geo"), py::arg("model"), py::arg("fa_weight") = 30.0,
        "Returns (labels, soft assignment).");

    m.def(
        "evaluate",
        [](const Bundle& b, const std::vector<int>& labels) {
            const EvalReport r = evaluate(b, make_labels(labels));
            py::dict d;
            d["corr"] = r.corr.mean;
            d["alpha"] = r.alpha.mean;
            d["ari"] = r.ari ? py::cast(*r.ari) : py::none();
            d["n_clusters_nonempty"] = r.n_clusters_nonempty;
            return d;
        },
        py::arg("bundle"), py::arg("labels"));
    m.def(
        "representative_pathway",
        [](const Bundle& b, const std::vector<int>& labels, int cluster) {
            return representative_pathway(b, make_labels(labels), cluster);
        },
        py::arg("bundle"), py::arg("labels"), py::arg("cluster"));
    m.def(
        "consistency",
        [](const std::vector<Bundle>& subjects, const std::vector<std::vector<int>>& labels) {
            std::vector<ClusterLabels> l;
            for (const auto& x : labels) l.push_back(make_labels(x));
            const ConsistencyReport r = consistency_report(subjects, l);
            py::dict d;
            d["mean_pathway"] = r.mean_pathway;
            d["mean_intra_cluster"] = r.mean_intra_cluster;
            d["mean_bundle"] = r.mean_bundle;
            d["skipped_clusters"] = r.skipped_clusters;
            return d;
        },
        py::arg("subjects"), py::arg("labels"));
}
