#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "nodulefuse/errors.hpp"
#include "nodulefuse/rng.hpp"
#include "nodulefuse/types.hpp"

namespace nf {

enum class Activation { ReLU, Sigmoid, Linear };

struct LayerSpec {
    enum class Kind { Conv3D, MaxPool3D, Flatten, Dense };
    Kind kind = Kind::Conv3D;
    int units = 0; // conv: output channels; dense: units
    Activation activation = Activation::ReLU;
    double l2 = 0.0;
};

inline LayerSpec conv3d(int channels, double l2 = 0.01) {
    return {LayerSpec::Kind::Conv3D, channels, Activation::ReLU, l2};
}
inline LayerSpec maxpool3d() { return {LayerSpec::Kind::MaxPool3D, 0, Activation::Linear, 0.0}; }
inline LayerSpec flatten() { return {LayerSpec::Kind::Flatten, 0, Activation::Linear, 0.0}; }
inline LayerSpec dense(int units, Activation act, double l2 = 0.0) {
    return {LayerSpec::Kind::Dense, units, act, l2};
}

/// Every convolution is 3x3x3 with same padding and ReLU; every pool is
/// 2x2x2 with stride 2.
struct CnnArchitecture {
    std::array<int, 3> input_dims{32, 32, 16};
    std::vector<LayerSpec> layers;
};

/// The canonical 10-conv architecture: pairs of 32/64/128/256/512-channel
/// convolutions separated by four pools, then dense 1024 / 64 / 1. The
/// dense-64 layer is the deep-feature layer.
inline CnnArchitecture default_architecture() {
    CnnArchitecture arch;
    arch.input_dims = {32, 32, 16};
    for (int channels : {32, 64, 128, 256}) {
        arch.layers.push_back(conv3d(channels));
        arch.layers.push_back(conv3d(channels));
        arch.layers.push_back(maxpool3d());
    }
    arch.layers.push_back(conv3d(512));
    arch.layers.push_back(conv3d(512));
    arch.layers.push_back(flatten());
    arch.layers.push_back(dense(1024, Activation::ReLU));
    arch.layers.push_back(dense(64, Activation::ReLU));
    arch.layers.push_back(dense(1, Activation::Sigmoid));
    return arch;
}

/// Desk-scale variant with the same input box and the same 64-wide
/// deep-feature layer; orders of magnitude cheaper to train.
inline CnnArchitecture small_architecture() {
    CnnArchitecture arch;
    arch.input_dims = {32, 32, 16};
    arch.layers = {conv3d(8), maxpool3d(), conv3d(16),
                   maxpool3d(), flatten(),  dense(128, Activation::ReLU),
                   dense(64, Activation::ReLU), dense(1, Activation::Sigmoid)};
    return arch;
}

struct LayerShape {
    std::string name;
    std::array<int, 3> dims{0, 0, 0};
    int channels = 0; // 0 once flattened
    int units = 0;    // flat width once flattened
};

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 16;
    int epochs = 10;
    std::uint64_t seed = 0;
};

struct TrainHistory {
    std::vector<double> bce;     // per-epoch mean data loss
    std::vector<double> penalty; // L2 penalty after each epoch's updates
};

namespace detail {

template <typename Scalar>
Scalar softplus(Scalar z) {
    return std::max(z, Scalar(0)) + std::log1p(std::exp(-std::abs(z)));
}

} // namespace detail

/// Minimal 3D CNN with explicit backpropagation. Float for production use;
/// double for finite-difference gradient checks. Convolutions run as
/// im2col + GEMM. Not reentrant: forward/backward share per-layer caches.
template <typename Scalar = float>
class Network {
public:
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Network(const CnnArchitecture& arch, std::uint64_t seed) : arch_(arch) {
        build_shapes();
        init_weights(seed);
    }

    const CnnArchitecture& architecture() const { return arch_; }

    std::vector<LayerShape> shape_table() const {
        std::vector<LayerShape> table;
        table.push_back({"input", arch_.input_dims, 1, 0});
        for (const auto& layer : layers_) {
            LayerShape row;
            switch (layer.spec.kind) {
                case LayerSpec::Kind::Conv3D:
                    row = {"conv3d(" + std::to_string(layer.cout) + ")", layer.out_dims, layer.cout, 0};
                    break;
                case LayerSpec::Kind::MaxPool3D:
                    row = {"maxpool3d", layer.out_dims, layer.cout, 0};
                    break;
                case LayerSpec::Kind::Flatten:
                    row = {"flatten", {0, 0, 0}, 0, layer.out_units};
                    break;
                case LayerSpec::Kind::Dense:
                    row = {"dense(" + std::to_string(layer.out_units) + ")", {0, 0, 0}, 0, layer.out_units};
                    break;
            }
            table.push_back(std::move(row));
        }
        return table;
    }

    int conv_layer_count() const {
        int n = 0;
        for (const auto& l : layers_)
            if (l.spec.kind == LayerSpec::Kind::Conv3D) ++n;
        return n;
    }

    /// Width of the deep-feature (second-to-last dense) layer.
    int feature_dim() const {
        const int li = penultimate_dense_index();
        return layers_[static_cast<std::size_t>(li)].out_units;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_)
            n += static_cast<std::size_t>(l.W.size()) + static_cast<std::size_t>(l.b.size());
        return n;
    }

    int layer_count() const { return static_cast<int>(layers_.size()); }
    const LayerSpec& layer_spec(int li) const { return layers_[static_cast<std::size_t>(li)].spec; }
    Mat& layer_weights(int li) { return layers_[static_cast<std::size_t>(li)].W; }
    const Mat& layer_weights(int li) const { return layers_[static_cast<std::size_t>(li)].W; }
    Vec& layer_bias(int li) { return layers_[static_cast<std::size_t>(li)].b; }
    const Vec& layer_bias(int li) const { return layers_[static_cast<std::size_t>(li)].b; }

    /// Pre-sigmoid output of the final dense layer for one grid.
    Scalar forward_logit(const VoxelGrid& grid) {
        load_input(grid);
        forward_all();
        return layers_.back().pre_vec[0];
    }

    Eigen::VectorXd predict_proba(const std::vector<const VoxelGrid*>& grids) {
        Eigen::VectorXd out(static_cast<Eigen::Index>(grids.size()));
        for (std::size_t i = 0; i < grids.size(); ++i) {
            const double z = static_cast<double>(forward_logit(*grids[i]));
            out[static_cast<Eigen::Index>(i)] = 1.0 / (1.0 + std::exp(-z));
        }
        return out;
    }

    /// Post-activation output of the deep-feature layer.
    Eigen::VectorXd extract_features(const VoxelGrid& grid) {
        load_input(grid);
        forward_all();
        const int li = penultimate_dense_index();
        return layers_[static_cast<std::size_t>(li)].out_vec.template cast<double>();
    }

    /// Mean BCE over the batch plus the L2 penalty; no gradients.
    double compute_loss(const std::vector<const VoxelGrid*>& grids, const Eigen::VectorXd& labels) {
        check_batch(grids, labels);
        double bce = 0.0;
        for (std::size_t i = 0; i < grids.size(); ++i) {
            const double z = static_cast<double>(forward_logit(*grids[i]));
            bce += detail::softplus(z) - labels[static_cast<Eigen::Index>(i)] * z;
        }
        return bce / static_cast<double>(grids.size()) + l2_penalty();
    }

    /// Same loss; fills the per-layer gradients (including the L2 terms).
    double compute_gradients(const std::vector<const VoxelGrid*>& grids, const Eigen::VectorXd& labels) {
        check_batch(grids, labels);
        zero_gradients();
        double bce = 0.0;
        const auto n = static_cast<double>(grids.size());
        for (std::size_t i = 0; i < grids.size(); ++i) {
            const double z = static_cast<double>(forward_logit(*grids[i]));
            const double y = labels[static_cast<Eigen::Index>(i)];
            bce += detail::softplus(z) - y * z;
            const Scalar dlogit = static_cast<Scalar>((1.0 / (1.0 + std::exp(-z)) - y) / n);
            backward_all(dlogit);
        }
        add_l2_gradients();
        return bce / n + l2_penalty();
    }

    /// Mini-batch training with adaptive-moment updates. History records
    /// the data (BCE) loss; the L2 penalty is tracked separately. Throws
    /// std::runtime_error with learning-rate guidance when the loss stops
    /// being finite.
    TrainHistory train(const std::vector<const VoxelGrid*>& grids, const Eigen::VectorXd& labels,
                       const TrainConfig& cfg) {
        check_batch(grids, labels);
        if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
        bool has0 = false, has1 = false;
        for (Eigen::Index i = 0; i < labels.size(); ++i) (labels[i] > 0.5 ? has1 : has0) = true;
        if (!has0 || !has1) throw std::invalid_argument("degenerate labels: only one class present");

        const auto n = static_cast<int>(grids.size());
        std::vector<int> order(static_cast<std::size_t>(n));
        TrainHistory history;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::iota(order.begin(), order.end(), 0);
            Rng rng(derive_seed(cfg.seed, "epoch", static_cast<std::uint64_t>(epoch)));
            std::shuffle(order.begin(), order.end(), rng);

            double epoch_bce = 0.0;
            for (int start = 0; start < n; start += cfg.batch_size) {
                const int bn = std::min(cfg.batch_size, n - start);
                zero_gradients();
                double batch_bce = 0.0;
                for (int bi = 0; bi < bn; ++bi) {
                    const int idx = order[static_cast<std::size_t>(start + bi)];
                    const double z = static_cast<double>(forward_logit(*grids[static_cast<std::size_t>(idx)]));
                    const double y = labels[idx];
                    batch_bce += detail::softplus(z) - y * z;
                    const Scalar dlogit =
                        static_cast<Scalar>((1.0 / (1.0 + std::exp(-z)) - y) / static_cast<double>(bn));
                    backward_all(dlogit);
                }
                if (!std::isfinite(batch_bce))
                    throw std::runtime_error(
                        "training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                        "; reduce learning_rate (current " + std::to_string(cfg.learning_rate) + ")");
                add_l2_gradients();
                adam_step(cfg.learning_rate);
                epoch_bce += batch_bce;
            }
            history.bce.push_back(epoch_bce / n);
            history.penalty.push_back(l2_penalty());
        }
        return history;
    }

    // Flat parameter views for finite-difference checks. Order: per layer,
    // W storage order then bias.
    Scalar get_parameter(std::size_t idx) const {
        const auto [l, off, is_bias] = locate(idx);
        return is_bias ? layers_[l].b[static_cast<Eigen::Index>(off)]
                       : layers_[l].W.data()[off];
    }
    void set_parameter(std::size_t idx, Scalar value) {
        const auto [l, off, is_bias] = locate(idx);
        if (is_bias)
            layers_[l].b[static_cast<Eigen::Index>(off)] = value;
        else
            layers_[l].W.data()[off] = value;
    }
    std::vector<double> flat_gradient() const {
        std::vector<double> g;
        g.reserve(parameter_count());
        for (const auto& layer : layers_) {
            for (Eigen::Index i = 0; i < layer.gW.size(); ++i)
                g.push_back(static_cast<double>(layer.gW.data()[i]));
            for (Eigen::Index i = 0; i < layer.gb.size(); ++i)
                g.push_back(static_cast<double>(layer.gb[i]));
        }
        return g;
    }

    double l2_penalty() const {
        double p = 0.0;
        for (const auto& layer : layers_)
            if (layer.spec.l2 > 0.0 && layer.W.size() > 0)
                p += layer.spec.l2 * static_cast<double>(layer.W.squaredNorm());
        return p;
    }

private:
    struct Layer {
        LayerSpec spec;
        std::array<int, 3> in_dims{}, out_dims{};
        int cin = 0, cout = 0;          // map stages
        int in_units = 0, out_units = 0; // flat stages
        Mat W, gW, mW, vW;
        Vec b, gb, mb, vb;
        // per-sample caches
        Mat out_map;
        Vec pre_vec, out_vec;
        std::vector<int> argmax; // pool routing, input spatial index per output cell
    };

    CnnArchitecture arch_;
    std::vector<Layer> layers_;
    Mat input_map_;           // current sample, 1 x spatial
    Mat col_ws_, dcol_ws_;    // shared im2col workspaces
    Mat din_ws_;              // gradient w.r.t. a conv/pool input
    long adam_t_ = 0;

    static std::string dims_str(const std::array<int, 3>& d) {
        return "(" + std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]) + ")";
    }

    void build_shapes() {
        if (arch_.layers.empty()) throw std::invalid_argument("architecture has no layers");
        for (int a = 0; a < 3; ++a)
            if (arch_.input_dims[static_cast<std::size_t>(a)] < 1)
                throw std::invalid_argument("input dims must be positive");

        std::array<int, 3> dims = arch_.input_dims;
        int channels = 1;
        bool flat = false;
        int flat_units = 0;
        for (const LayerSpec& spec : arch_.layers) {
            Layer layer;
            layer.spec = spec;
            switch (spec.kind) {
                case LayerSpec::Kind::Conv3D:
                    if (flat) throw std::invalid_argument("conv3d after flatten");
                    if (spec.units < 1) throw std::invalid_argument("conv3d needs >= 1 channel");
                    layer.cin = channels;
                    layer.cout = spec.units;
                    layer.in_dims = layer.out_dims = dims;
                    channels = spec.units;
                    break;
                case LayerSpec::Kind::MaxPool3D: {
                    if (flat) throw std::invalid_argument("maxpool3d after flatten");
                    for (int a = 0; a < 3; ++a)
                        if (dims[static_cast<std::size_t>(a)] < 2 || dims[static_cast<std::size_t>(a)] % 2 != 0)
                            throw std::invalid_argument("shape underflow: cannot pool dims " + dims_str(dims));
                    layer.cin = layer.cout = channels;
                    layer.in_dims = dims;
                    for (int a = 0; a < 3; ++a) dims[static_cast<std::size_t>(a)] /= 2;
                    layer.out_dims = dims;
                    break;
                }
                case LayerSpec::Kind::Flatten:
                    if (flat) throw std::invalid_argument("flatten after flatten");
                    layer.cin = channels;
                    layer.in_dims = dims;
                    flat = true;
                    flat_units = channels * dims[0] * dims[1] * dims[2];
                    layer.out_units = flat_units;
                    break;
                case LayerSpec::Kind::Dense:
                    if (!flat) throw std::invalid_argument("dense requires a flatten layer first");
                    if (spec.units < 1) throw std::invalid_argument("dense needs >= 1 unit");
                    layer.in_units = flat_units;
                    layer.out_units = spec.units;
                    flat_units = spec.units;
                    break;
            }
            layers_.push_back(std::move(layer));
        }
        if (layers_.back().spec.kind != LayerSpec::Kind::Dense)
            throw std::invalid_argument("architecture must end with a dense layer");
    }

    void init_weights(std::uint64_t seed) {
        for (std::size_t li = 0; li < layers_.size(); ++li) {
            Layer& layer = layers_[li];
            int fan_in = 0;
            Eigen::Index rows = 0, cols = 0;
            if (layer.spec.kind == LayerSpec::Kind::Conv3D) {
                fan_in = layer.cin * 27;
                rows = layer.cout;
                cols = fan_in;
            } else if (layer.spec.kind == LayerSpec::Kind::Dense) {
                fan_in = layer.in_units;
                rows = layer.out_units;
                cols = layer.in_units;
            } else {
                continue;
            }
            // Fan-in-scaled init: sqrt(2/fan_in) ahead of ReLU, sqrt(1/fan_in)
            // otherwise. Biases start at zero.
            const double stddev = layer.spec.activation == Activation::ReLU
                                      ? std::sqrt(2.0 / fan_in)
                                      : std::sqrt(1.0 / fan_in);
            Rng rng(derive_seed(seed, "layer", static_cast<std::uint64_t>(li)));
            std::normal_distribution<double> normal(0.0, stddev);
            layer.W.resize(rows, cols);
            for (Eigen::Index r = 0; r < rows; ++r)
                for (Eigen::Index c = 0; c < cols; ++c) layer.W(r, c) = static_cast<Scalar>(normal(rng));
            layer.b = Vec::Zero(rows);
            layer.gW = Mat::Zero(rows, cols);
            layer.gb = Vec::Zero(rows);
            layer.mW = Mat::Zero(rows, cols);
            layer.vW = Mat::Zero(rows, cols);
            layer.mb = Vec::Zero(rows);
            layer.vb = Vec::Zero(rows);
        }
    }

    int penultimate_dense_index() const {
        int last = -1, second = -1;
        for (int li = 0; li < static_cast<int>(layers_.size()); ++li) {
            if (layers_[static_cast<std::size_t>(li)].spec.kind == LayerSpec::Kind::Dense) {
                second = last;
                last = li;
            }
        }
        if (second < 0) throw std::invalid_argument("architecture has no deep-feature (penultimate dense) layer");
        return second;
    }

    void check_batch(const std::vector<const VoxelGrid*>& grids, const Eigen::VectorXd& labels) const {
        if (grids.empty()) throw std::invalid_argument("empty batch");
        if (static_cast<Eigen::Index>(grids.size()) != labels.size())
            throw std::invalid_argument("grids and labels disagree on count");
        for (const VoxelGrid* g : grids) {
            if (g->dims != arch_.input_dims)
                throw std::invalid_argument("grid dims " + dims_str(g->dims) +
                                            " do not match network input " + dims_str(arch_.input_dims));
        }
        if (layers_.back().out_units != 1 || layers_.back().spec.activation != Activation::Sigmoid)
            throw std::invalid_argument("training requires a single-unit sigmoid output layer");
    }

    void load_input(const VoxelGrid& grid) {
        if (grid.dims != arch_.input_dims)
            throw std::invalid_argument("grid dims " + dims_str(grid.dims) +
                                        " do not match network input " + dims_str(arch_.input_dims));
        const auto spatial = static_cast<Eigen::Index>(grid.size());
        input_map_.resize(1, spatial);
        for (Eigen::Index p = 0; p < spatial; ++p)
            input_map_(0, p) = static_cast<Scalar>(grid.data[static_cast<std::size_t>(p)]);
    }

    // col(r, p) layout: r = ci*27 + ((kz*3 + ky)*3 + kx) with kernel
    // offsets k in 0..2 standing for -1..1; same padding, x-fastest maps.
    void im2col(const Mat& in, const std::array<int, 3>& dims, int cin, Mat& col) const {
        const int nx = dims[0], ny = dims[1], nz = dims[2];
        const Eigen::Index spatial = static_cast<Eigen::Index>(nx) * ny * nz;
        col.resize(static_cast<Eigen::Index>(cin) * 27, spatial);
        for (int kz = 0; kz < 3; ++kz) {
            const int dz = kz - 1;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int o = (kz * 3 + ky) * 3 + kx;
                    const int x_lo = std::max(0, -dx);
                    const int x_hi = std::min(nx, nx - dx);
                    for (int z = 0; z < nz; ++z) {
                        const int zz = z + dz;
                        const bool z_ok = zz >= 0 && zz < nz;
                        for (int y = 0; y < ny; ++y) {
                            const int yy = y + dy;
                            const bool ok = z_ok && yy >= 0 && yy < ny;
                            const Eigen::Index dst = static_cast<Eigen::Index>(z * ny + y) * nx;
                            const Eigen::Index src = ok ? static_cast<Eigen::Index>(zz * ny + yy) * nx : 0;
                            for (int ci = 0; ci < cin; ++ci) {
                                auto row = col.row(static_cast<Eigen::Index>(ci) * 27 + o);
                                if (!ok || x_lo >= x_hi) {
                                    row.segment(dst, nx).setZero();
                                    continue;
                                }
                                if (x_lo > 0) row.segment(dst, x_lo).setZero();
                                if (x_hi < nx) row.segment(dst + x_hi, nx - x_hi).setZero();
                                row.segment(dst + x_lo, x_hi - x_lo) =
                                    in.row(ci).segment(src + x_lo + dx, x_hi - x_lo);
                            }
                        }
                    }
                }
            }
        }
    }

    // Transpose of im2col: scatter-add column gradients back onto the map.
    void col2im_add(const Mat& dcol, const std::array<int, 3>& dims, int cin, Mat& din) const {
        const int nx = dims[0], ny = dims[1], nz = dims[2];
        for (int kz = 0; kz < 3; ++kz) {
            const int dz = kz - 1;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int o = (kz * 3 + ky) * 3 + kx;
                    const int x_lo = std::max(0, -dx);
                    const int x_hi = std::min(nx, nx - dx);
                    if (x_lo >= x_hi) continue;
                    for (int z = 0; z < nz; ++z) {
                        const int zz = z + dz;
                        if (zz < 0 || zz >= nz) continue;
                        for (int y = 0; y < ny; ++y) {
                            const int yy = y + dy;
                            if (yy < 0 || yy >= ny) continue;
                            const Eigen::Index dst = static_cast<Eigen::Index>(z * ny + y) * nx;
                            const Eigen::Index src = static_cast<Eigen::Index>(zz * ny + yy) * nx;
                            for (int ci = 0; ci < cin; ++ci)
                                din.row(ci).segment(src + x_lo + dx, x_hi - x_lo) +=
                                    dcol.row(static_cast<Eigen::Index>(ci) * 27 + o)
                                        .segment(dst + x_lo, x_hi - x_lo);
                        }
                    }
                }
            }
        }
    }

    void forward_all() {
        const Mat* cur_map = &input_map_;
        const Vec* cur_vec = nullptr;
        for (Layer& layer : layers_) {
            switch (layer.spec.kind) {
                case LayerSpec::Kind::Conv3D: {
                    im2col(*cur_map, layer.in_dims, layer.cin, col_ws_);
                    layer.out_map.noalias() = layer.W * col_ws_;
                    layer.out_map.colwise() += layer.b;
                    layer.out_map = layer.out_map.cwiseMax(Scalar(0)); // ReLU
                    cur_map = &layer.out_map;
                    break;
                }
                case LayerSpec::Kind::MaxPool3D: {
                    const int inx = layer.in_dims[0], iny = layer.in_dims[1];
                    const int onx = layer.out_dims[0], ony = layer.out_dims[1], onz = layer.out_dims[2];
                    const Eigen::Index out_spatial = static_cast<Eigen::Index>(onx) * ony * onz;
                    layer.out_map.resize(layer.cout, out_spatial);
                    layer.argmax.assign(static_cast<std::size_t>(layer.cout * out_spatial), 0);
                    const Mat& in = *cur_map;
                    for (int oz = 0; oz < onz; ++oz)
                        for (int oy = 0; oy < ony; ++oy)
                            for (int ox = 0; ox < onx; ++ox) {
                                const Eigen::Index q = static_cast<Eigen::Index>(oz * ony + oy) * onx + ox;
                                for (int c = 0; c < layer.cout; ++c) {
                                    Scalar best = -std::numeric_limits<Scalar>::infinity();
                                    int best_p = 0;
                                    for (int az = 0; az < 2; ++az)
                                        for (int ay = 0; ay < 2; ++ay)
                                            for (int ax = 0; ax < 2; ++ax) {
                                                const int p = ((2 * oz + az) * iny + (2 * oy + ay)) * inx +
                                                              (2 * ox + ax);
                                                const Scalar v = in(c, p);
                                                if (v > best) {
                                                    best = v;
                                                    best_p = p;
                                                }
                                            }
                                    layer.out_map(c, q) = best;
                                    layer.argmax[static_cast<std::size_t>(c * out_spatial + q)] = best_p;
                                }
                            }
                    cur_map = &layer.out_map;
                    break;
                }
                case LayerSpec::Kind::Flatten: {
                    const Mat& in = *cur_map;
                    const Eigen::Index spatial = in.cols();
                    layer.out_vec.resize(layer.out_units);
                    for (Eigen::Index p = 0; p < spatial; ++p)
                        for (int c = 0; c < layer.cin; ++c)
                            layer.out_vec[p * layer.cin + c] = in(c, p);
                    cur_vec = &layer.out_vec;
                    break;
                }
                case LayerSpec::Kind::Dense: {
                    layer.pre_vec.noalias() = layer.W * (*cur_vec);
                    layer.pre_vec += layer.b;
                    switch (layer.spec.activation) {
                        case Activation::ReLU: layer.out_vec = layer.pre_vec.cwiseMax(Scalar(0)); break;
                        case Activation::Sigmoid:
                            layer.out_vec = layer.pre_vec.unaryExpr(
                                [](Scalar z) { return Scalar(1) / (Scalar(1) + std::exp(-z)); });
                            break;
                        case Activation::Linear: layer.out_vec = layer.pre_vec; break;
                    }
                    cur_vec = &layer.out_vec;
                    break;
                }
            }
        }
    }

    // Backward for the sample currently cached by forward_all. dlogit is
    // dLoss/d(final pre-activation); the final layer's sigmoid is fused
    // into the BCE gradient by the caller.
    void backward_all(Scalar dlogit) {
        Vec dvec = Vec::Constant(1, dlogit);
        Mat dmap;
        for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
            Layer& layer = layers_[static_cast<std::size_t>(li)];
            switch (layer.spec.kind) {
                case LayerSpec::Kind::Dense: {
                    Vec dz;
                    if (li == static_cast<int>(layers_.size()) - 1) {
                        dz = std::move(dvec); // fused sigmoid + BCE
                    } else {
                        switch (layer.spec.activation) {
                            case Activation::ReLU:
                                dz = dvec.cwiseProduct((layer.out_vec.array() > Scalar(0))
                                                           .template cast<Scalar>()
                                                           .matrix());
                                break;
                            case Activation::Sigmoid:
                                dz = dvec.cwiseProduct(
                                    (layer.out_vec.array() * (Scalar(1) - layer.out_vec.array()))
                                        .matrix());
                                break;
                            case Activation::Linear: dz = std::move(dvec); break;
                        }
                    }
                    const Vec& in = layer_input_vec(li);
                    layer.gW.noalias() += dz * in.transpose();
                    layer.gb += dz;
                    dvec.noalias() = layer.W.transpose() * dz;
                    break;
                }
                case LayerSpec::Kind::Flatten: {
                    const Eigen::Index spatial = static_cast<Eigen::Index>(layer.in_dims[0]) *
                                                 layer.in_dims[1] * layer.in_dims[2];
                    dmap.resize(layer.cin, spatial);
                    for (Eigen::Index p = 0; p < spatial; ++p)
                        for (int c = 0; c < layer.cin; ++c) dmap(c, p) = dvec[p * layer.cin + c];
                    break;
                }
                case LayerSpec::Kind::MaxPool3D: {
                    const Eigen::Index in_spatial = static_cast<Eigen::Index>(layer.in_dims[0]) *
                                                    layer.in_dims[1] * layer.in_dims[2];
                    const Eigen::Index out_spatial = dmap.cols();
                    Mat din = Mat::Zero(layer.cin, in_spatial);
                    for (int c = 0; c < layer.cout; ++c)
                        for (Eigen::Index q = 0; q < out_spatial; ++q)
                            din(c, layer.argmax[static_cast<std::size_t>(c * out_spatial + q)]) +=
                                dmap(c, q);
                    dmap = std::move(din);
                    break;
                }
                case LayerSpec::Kind::Conv3D: {
                    // ReLU mask from the cached post-activation map.
                    Mat dpre = dmap.cwiseProduct(
                        (layer.out_map.array() > Scalar(0)).template cast<Scalar>().matrix());
                    layer.gb += dpre.rowwise().sum();
                    const Mat& in = layer_input_map(li);
                    im2col(in, layer.in_dims, layer.cin, col_ws_);
                    layer.gW.noalias() += dpre * col_ws_.transpose();
                    dcol_ws_.noalias() = layer.W.transpose() * dpre;
                    din_ws_ = Mat::Zero(layer.cin, dmap.cols());
                    col2im_add(dcol_ws_, layer.in_dims, layer.cin, din_ws_);
                    dmap = din_ws_;
                    break;
                }
            }
        }
    }

    const Mat& layer_input_map(int li) const {
        for (int p = li - 1; p >= 0; --p) {
            const Layer& prev = layers_[static_cast<std::size_t>(p)];
            if (prev.spec.kind == LayerSpec::Kind::Conv3D || prev.spec.kind == LayerSpec::Kind::MaxPool3D)
                return prev.out_map;
        }
        return input_map_;
    }

    const Vec& layer_input_vec(int li) const {
        const Layer& prev = layers_[static_cast<std::size_t>(li - 1)];
        return prev.out_vec; // flatten or dense both cache out_vec
    }

    void zero_gradients() {
        for (Layer& layer : layers_) {
            if (layer.gW.size() > 0) layer.gW.setZero();
            if (layer.gb.size() > 0) layer.gb.setZero();
        }
    }

    void add_l2_gradients() {
        for (Layer& layer : layers_)
            if (layer.spec.l2 > 0.0 && layer.W.size() > 0)
                layer.gW += Scalar(2 * layer.spec.l2) * layer.W;
    }

    void adam_step(double learning_rate) {
        constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
        ++adam_t_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t_));
        for (Layer& layer : layers_) {
            if (layer.W.size() == 0) continue;
            layer.mW = Scalar(beta1) * layer.mW + Scalar(1 - beta1) * layer.gW;
            layer.vW = Scalar(beta2) * layer.vW + Scalar(1 - beta2) * layer.gW.cwiseProduct(layer.gW);
            layer.W -= (Scalar(learning_rate) *
                        (layer.mW / Scalar(bc1)).cwiseQuotient(
                            ((layer.vW / Scalar(bc2)).cwiseSqrt().array() + Scalar(eps)).matrix()));
            layer.mb = Scalar(beta1) * layer.mb + Scalar(1 - beta1) * layer.gb;
            layer.vb = Scalar(beta2) * layer.vb + Scalar(1 - beta2) * layer.gb.cwiseProduct(layer.gb);
            layer.b -= (Scalar(learning_rate) *
                        (layer.mb / Scalar(bc1)).cwiseQuotient(
                            ((layer.vb / Scalar(bc2)).cwiseSqrt().array() + Scalar(eps)).matrix()));
        }
    }

    std::tuple<std::size_t, std::size_t, bool> locate(std::size_t idx) const {
        for (std::size_t li = 0; li < layers_.size(); ++li) {
            const Layer& layer = layers_[li];
            const auto wn = static_cast<std::size_t>(layer.W.size());
            const auto bn = static_cast<std::size_t>(layer.b.size());
            if (idx < wn) return {li, idx, false};
            idx -= wn;
            if (idx < bn) return {li, idx, true};
            idx -= bn;
        }
        throw std::out_of_range("parameter index out of range");
    }
};

// ---------------------------------------------------------------------------
// Checkpoints: magic "NFC1", version, architecture header, then raw f32
// tensors — conv weights ordered kx,ky,kz,cin,cout (fastest to slowest),
// then bias; dense weights input-fastest per output row, then bias.
// ---------------------------------------------------------------------------

void save_checkpoint(const Network<float>& net, const std::filesystem::path& path);
Network<float> load_checkpoint(const std::filesystem::path& path);

nlohmann::json architecture_to_json(const CnnArchitecture& arch);
CnnArchitecture architecture_from_json(const nlohmann::json& j);

} // namespace nf
