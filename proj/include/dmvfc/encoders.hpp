#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmvfc/autodiff.hpp"
#include "dmvfc/fiberdata.hpp"

namespace dmvfc {

enum class View : std::uint8_t { Geometric = 1, Functional = 2 };

const char* view_name(View view);
View parse_view(const std::string& text);

inline constexpr int kEmbedDim = 10;

struct GeometricArch {
    int points = kDefaultPointsPerFiber;
    int neighbors = 5;
    int width1 = 32;
    int width2 = 64;
    double slope = 0.01;
};

struct FunctionalArch {
    int length = kDefaultBoldLength;
    int hidden1 = 64;
    int hidden2 = 32;
    double slope = 0.01;
};

// Trainable parameters of one view's encoder plus the fixed input
// normalisation (coordinate shift/scale for the geometric view).
struct EncoderWeights {
    View view = View::Geometric;
    int embed_dim = kEmbedDim;
    int input_size = 0;  // n_p for geometric, T for functional
    std::vector<std::string> names;
    std::vector<ad::Var> params;
    Eigen::RowVector3d input_shift = Eigen::RowVector3d::Zero();
    double input_scale = 1.0;

    // Deep copy with fresh leaf tensors.
    EncoderWeights clone() const;
    std::size_t parameter_count() const;
};

EncoderWeights init_geometric(std::uint64_t seed, const GeometricArch& arch = {});
EncoderWeights init_functional(std::uint64_t seed, const FunctionalArch& arch = {});
EncoderWeights init_encoder(View view, std::uint64_t seed, int input_size);

// Centres coordinates on the bundle's mean point and scales by the RMS radius.
void fit_input_normalization(EncoderWeights& weights, const Bundle& bundle);

// B x 10 embeddings, differentiable with respect to the weights.
ad::Var encode_geometric(const EncoderWeights& weights, const std::vector<const Fiber*>& fibers);
ad::Var encode_functional(const EncoderWeights& weights, const std::vector<const BoldPair*>& bolds);

// Embeddings of bundle.records[indices] for the encoder's view.
ad::Var encode(const EncoderWeights& weights, const Bundle& bundle, const std::vector<int>& indices);

// Whole-bundle embeddings, computed in chunks without keeping a graph.
ad::Matrix embed_bundle(const EncoderWeights& weights, const Bundle& bundle, int chunk = 256);

// "DMWT" checkpoint: u32 version, u8 view, u32 embed_dim, u32 input_size,
// normalisation, then per tensor (u32 rows, u32 cols, float32 data).
void save_weights(const EncoderWeights& weights, const std::filesystem::path& path);
EncoderWeights load_weights(const std::filesystem::path& path);
// Loads into an existing architecture, rejecting any shape mismatch.
void load_weights_into(EncoderWeights& weights, const std::filesystem::path& path);

}  // namespace dmvfc
