#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "nodulefuse/cnn3d.hpp"
#include "nodulefuse/errors.hpp"
#include "nodulefuse/rng.hpp"
#include "nodulefuse/types.hpp"
#include "oracles.hpp"

using namespace nf;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("nodulefuse_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << bytes;
    REQUIRE(out.good());
}

template <typename Ex, typename Fn>
std::string thrown_message(Fn&& fn) {
    try {
        fn();
    } catch (const Ex& e) {
        return e.what();
    }
    return {};
}

VoxelGrid random_grid(std::array<int, 3> dims, Rng& rng, float lo = 0.0f, float hi = 1.0f) {
    VoxelGrid g = VoxelGrid::zeros(dims, {1.0f, 1.0f, 1.0f}, GridKind::Intensity);
    std::uniform_real_distribution<float> u(lo, hi);
    for (auto& v : g.data) v = u(rng);
    return g;
}

// Bright ball on a dim noisy background; the label-separating factor is the
// radius. Center jitter keeps the 16 training grids distinct.
VoxelGrid ball_grid(double radius, Rng& rng) {
    VoxelGrid g = VoxelGrid::zeros({32, 32, 16}, {1.0f, 1.0f, 1.0f}, GridKind::Intensity);
    std::uniform_real_distribution<double> jitter(-2.0, 2.0);
    std::uniform_real_distribution<float> bg(0.0f, 0.1f);
    std::uniform_real_distribution<float> fg(0.8f, 1.0f);
    const double cx = 15.5 + jitter(rng), cy = 15.5 + jitter(rng), cz = 7.5 + jitter(rng);
    for (int z = 0; z < g.dims[2]; ++z)
        for (int y = 0; y < g.dims[1]; ++y)
            for (int x = 0; x < g.dims[0]; ++x) {
                const double dx = x - cx, dy = y - cy, dz = z - cz;
                const bool inside = dx * dx + dy * dy + dz * dz <= radius * radius;
                g.at(x, y, z) = inside ? fg(rng) : bg(rng);
            }
    return g;
}

std::vector<const VoxelGrid*> ptrs(const std::vector<VoxelGrid>& grids) {
    std::vector<const VoxelGrid*> out;
    out.reserve(grids.size());
    for (const auto& g : grids) out.push_back(&g);
    return out;
}

CnnArchitecture tiny_architecture() {
    CnnArchitecture arch;
    arch.input_dims = {8, 8, 4};
    arch.layers = {conv3d(4), maxpool3d(), flatten(), dense(8, Activation::ReLU),
                   dense(1, Activation::Sigmoid)};
    return arch;
}

// Direct (non-im2col) 3x3x3 same-padding convolution + ReLU on a
// single-channel grid; the network under test must match this to 1e-6.
double conv_relu_oracle(const VoxelGrid& g, const Eigen::MatrixXd& W, const Eigen::VectorXd& b,
                        int co, int x, int y, int z) {
    double acc = b[co];
    for (int kz = 0; kz < 3; ++kz)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const int xx = x + kx - 1, yy = y + ky - 1, zz = z + kz - 1;
                if (!g.in_bounds(xx, yy, zz)) continue;
                acc += W(co, (kz * 3 + ky) * 3 + kx) * static_cast<double>(g.at(xx, yy, zz));
            }
    return std::max(acc, 0.0);
}

// Max |analytic - central difference| / max(|analytic|, |fd|, 1e-4) over
// every parameter of the network, on the given batch.
double max_fd_rel_error(Network<double>& net, const std::vector<const VoxelGrid*>& grids,
                        const Eigen::VectorXd& labels, double h) {
    net.compute_gradients(grids, labels);
    const std::vector<double> analytic = net.flat_gradient();
    REQUIRE(analytic.size() == net.parameter_count());
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double orig = net.get_parameter(i);
        net.set_parameter(i, orig + h);
        const double lp = net.compute_loss(grids, labels);
        net.set_parameter(i, orig - h);
        const double lm = net.compute_loss(grids, labels);
        net.set_parameter(i, orig);
        const double fd = (lp - lm) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-4});
        worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
    return worst;
}

void check_shape_row(const LayerShape& row, const std::string& name, std::array<int, 3> dims,
                     int channels, int units) {
    CAPTURE(row.name);
    CHECK(row.name == name);
    CHECK(row.dims == dims);
    CHECK(row.channels == channels);
    CHECK(row.units == units);
}

} // namespace

TEST_CASE("canonical architecture matches the documented shape table") {
    const CnnArchitecture arch = default_architecture();
    Network<float> net(arch, 1);

    CHECK(net.conv_layer_count() == 10);
    CHECK(net.feature_dim() == 64);
    CHECK(net.layer_count() == 18);

    const auto table = net.shape_table();
    REQUIRE(table.size() == 19);
    check_shape_row(table[0], "input", {32, 32, 16}, 1, 0);
    check_shape_row(table[1], "conv3d(32)", {32, 32, 16}, 32, 0);
    check_shape_row(table[2], "conv3d(32)", {32, 32, 16}, 32, 0);
    check_shape_row(table[3], "maxpool3d", {16, 16, 8}, 32, 0);
    check_shape_row(table[4], "conv3d(64)", {16, 16, 8}, 64, 0);
    check_shape_row(table[5], "conv3d(64)", {16, 16, 8}, 64, 0);
    check_shape_row(table[6], "maxpool3d", {8, 8, 4}, 64, 0);
    check_shape_row(table[7], "conv3d(128)", {8, 8, 4}, 128, 0);
    check_shape_row(table[8], "conv3d(128)", {8, 8, 4}, 128, 0);
    check_shape_row(table[9], "maxpool3d", {4, 4, 2}, 128, 0);
    check_shape_row(table[10], "conv3d(256)", {4, 4, 2}, 256, 0);
    check_shape_row(table[11], "conv3d(256)", {4, 4, 2}, 256, 0);
    check_shape_row(table[12], "maxpool3d", {2, 2, 1}, 256, 0);
    check_shape_row(table[13], "conv3d(512)", {2, 2, 1}, 512, 0);
    check_shape_row(table[14], "conv3d(512)", {2, 2, 1}, 512, 0);
    check_shape_row(table[15], "flatten", {0, 0, 0}, 0, 2048);
    check_shape_row(table[16], "dense(1024)", {0, 0, 0}, 0, 1024);
    check_shape_row(table[17], "dense(64)", {0, 0, 0}, 0, 64);
    check_shape_row(table[18], "dense(1)", {0, 0, 0}, 0, 1);

    // Independent recount: conv W is cout x (cin*27); dense W is out x in.
    std::size_t expected = 0;
    const int convs[10][2] = {{1, 32},   {32, 32},   {32, 64},   {64, 64},   {64, 128},
                              {128, 128}, {128, 256}, {256, 256}, {256, 512}, {512, 512}};
    for (const auto& c : convs) expected += static_cast<std::size_t>(c[1]) * (c[0] * 27 + 1);
    expected += 1024u * (2048u + 1) + 64u * (1024u + 1) + 1u * (64u + 1);
    CHECK(net.parameter_count() == expected);
    CHECK(net.parameter_count() == 16294817u); // ~16.3M parameters

    // Conv kernels are always 3x3x3: every conv weight matrix has cin*27 columns.
    for (int li = 0; li < net.layer_count(); ++li)
        if (net.layer_spec(li).kind == LayerSpec::Kind::Conv3D)
            CHECK(net.layer_weights(li).cols() % 27 == 0);
}

TEST_CASE("weight initialization is deterministic per seed") {
    const CnnArchitecture arch = small_architecture();
    Network<float> a(arch, 7), b(arch, 7), c(arch, 8);
    bool all_equal = true, any_differs = false;
    for (int li = 0; li < a.layer_count(); ++li) {
        if (a.layer_weights(li).size() == 0) continue;
        all_equal = all_equal && a.layer_weights(li) == b.layer_weights(li) &&
                    a.layer_bias(li) == b.layer_bias(li);
        any_differs = any_differs || a.layer_weights(li) != c.layer_weights(li);
        CHECK(a.layer_bias(li).isZero(0.0f)); // biases start at zero
    }
    CHECK(all_equal);
    CHECK(any_differs);
}

TEST_CASE("invalid architectures are rejected at build time") {
    SUBCASE("a fifth pool would shrink z below one voxel") {
        CnnArchitecture arch = default_architecture();
        // After the fourth pool the map is (2,2,1); pooling again underflows z.
        arch.layers.insert(arch.layers.end() - 4, maxpool3d());
        const auto msg = thrown_message<std::invalid_argument>([&] { Network<float> n(arch, 0); });
        CHECK(msg.find("shape underflow") != std::string::npos);
        CHECK(msg.find("(2,2,1)") != std::string::npos);
    }
    SUBCASE("pooling an odd dimension underflows too") {
        CnnArchitecture arch;
        arch.input_dims = {6, 6, 3};
        arch.layers = {maxpool3d(), flatten(), dense(1, Activation::Sigmoid)};
        CHECK_THROWS_AS(Network<float>(arch, 0), std::invalid_argument);
    }
    SUBCASE("dense requires flatten first") {
        CnnArchitecture arch;
        arch.input_dims = {4, 4, 2};
        arch.layers = {conv3d(2), dense(1, Activation::Sigmoid)};
        const auto msg = thrown_message<std::invalid_argument>([&] { Network<float> n(arch, 0); });
        CHECK(msg.find("flatten") != std::string::npos);
    }
    SUBCASE("conv after flatten") {
        CnnArchitecture arch;
        arch.input_dims = {4, 4, 2};
        arch.layers = {flatten(), conv3d(2), dense(1, Activation::Sigmoid)};
        CHECK_THROWS_AS(Network<float>(arch, 0), std::invalid_argument);
    }
    SUBCASE("must end with dense") {
        CnnArchitecture arch;
        arch.input_dims = {4, 4, 2};
        arch.layers = {conv3d(2), flatten()};
        const auto msg = thrown_message<std::invalid_argument>([&] { Network<float> n(arch, 0); });
        CHECK(msg.find("end with a dense layer") != std::string::npos);
    }
    SUBCASE("empty layer list") {
        CnnArchitecture arch;
        arch.layers.clear();
        CHECK_THROWS_AS(Network<float>(arch, 0), std::invalid_argument);
    }
    SUBCASE("non-positive input dims") {
        CnnArchitecture arch = tiny_architecture();
        arch.input_dims = {8, 0, 4};
        CHECK_THROWS_AS(Network<float>(arch, 0), std::invalid_argument);
    }
}

TEST_CASE("all-zero input yields probability exactly one half") {
    // Biases initialize to zero, so a zero grid propagates zeros through
    // every conv/dense stage and the final sigmoid sees logit 0.
    Network<float> net(small_architecture(), 3);
    const VoxelGrid zero = VoxelGrid::zeros({32, 32, 16}, {1, 1, 1}, GridKind::Intensity);
    const auto p = net.predict_proba({&zero});
    REQUIRE(p.size() == 1);
    CHECK(p[0] == 0.5);
    CHECK(net.forward_logit(zero) == 0.0f);
}

TEST_CASE("predictions are strict probabilities for random inputs") {
    Network<float> net(tiny_architecture(), 11);
    Rng rng(derive_seed(11, "inputs", 0));
    std::vector<VoxelGrid> grids;
    for (int i = 0; i < 100; ++i) grids.push_back(random_grid({8, 8, 4}, rng));
    const auto p = net.predict_proba(ptrs(grids));
    REQUIRE(p.size() == 100);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        CHECK(p[i] > 0.0);
        CHECK(p[i] < 1.0);
        CHECK(std::isfinite(p[i]));
    }
}

TEST_CASE("network convolution matches a hand-unrolled direct convolution") {
    CnnArchitecture arch;
    arch.input_dims = {4, 4, 2};
    arch.layers = {conv3d(2), flatten(), dense(1, Activation::Sigmoid)};
    Network<double> net(arch, 21);
    const int nx = 4, ny = 4, nz = 2, C = 2;

    Rng rng(derive_seed(21, "conv-oracle", 0));
    VoxelGrid g = random_grid({nx, ny, nz}, rng);

    SUBCASE("random kernels against the direct-convolution oracle") {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        Eigen::MatrixXd W(C, 27);
        for (int r = 0; r < C; ++r)
            for (int c = 0; c < 27; ++c) W(r, c) = u(rng);
        Eigen::VectorXd b(C);
        b << 0.3, -0.2;
        Eigen::MatrixXd dW(1, nx * ny * nz * C);
        for (int c = 0; c < dW.cols(); ++c) dW(0, c) = u(rng);
        Eigen::VectorXd db(1);
        db << 0.1;

        net.layer_weights(0) = W;
        net.layer_bias(0) = b;
        net.layer_weights(2) = dW;
        net.layer_bias(2) = db;

        // Flattened order is spatial-position-major (x fastest), channel minor.
        double logit = db[0];
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x) {
                    const int p = (z * ny + y) * nx + x;
                    for (int co = 0; co < C; ++co)
                        logit += dW(0, p * C + co) * conv_relu_oracle(g, W, b, co, x, y, z);
                }

        CHECK(std::abs(net.forward_logit(g) - logit) < 1e-6);
        const auto proba = net.predict_proba({&g});
        CHECK(std::abs(proba[0] - 1.0 / (1.0 + std::exp(-logit))) < 1e-9);
    }

    SUBCASE("single-tap kernels pin the layout conventions") {
        // Zero everything, then light up exactly one kernel tap in channel 0
        // and read single activations back through a one-hot dense head.
        net.layer_weights(0).setZero();
        net.layer_bias(0).setZero();
        net.layer_bias(2).setZero();

        auto read_activation = [&](int x, int y, int z) {
            const int p = (z * ny + y) * nx + x;
            net.layer_weights(2).setZero();
            net.layer_weights(2)(0, p * C + 0) = 1.0;
            return static_cast<double>(net.forward_logit(g));
        };

        SUBCASE("center tap reproduces the input") {
            net.layer_weights(0)(0, (1 * 3 + 1) * 3 + 1) = 1.0;
            for (int z = 0; z < nz; ++z)
                for (int y = 0; y < ny; ++y)
                    for (int x = 0; x < nx; ++x)
                        CHECK(read_activation(x, y, z) ==
                              doctest::Approx(g.at(x, y, z)).epsilon(1e-12));
        }
        SUBCASE("corner tap shifts by (-1,-1,-1) with zero padding") {
            net.layer_weights(0)(0, 0) = 1.0;
            for (int z = 0; z < nz; ++z)
                for (int y = 0; y < ny; ++y)
                    for (int x = 0; x < nx; ++x) {
                        const double expect = (x > 0 && y > 0 && z > 0)
                                                  ? static_cast<double>(g.at(x - 1, y - 1, z - 1))
                                                  : 0.0;
                        CHECK(read_activation(x, y, z) == doctest::Approx(expect).epsilon(1e-12));
                    }
        }
        SUBCASE("+x tap shifts by (+1,0,0) with zero padding") {
            net.layer_weights(0)(0, (1 * 3 + 1) * 3 + 2) = 1.0;
            for (int z = 0; z < nz; ++z)
                for (int y = 0; y < ny; ++y)
                    for (int x = 0; x < nx; ++x) {
                        const double expect =
                            x + 1 < nx ? static_cast<double>(g.at(x + 1, y, z)) : 0.0;
                        CHECK(read_activation(x, y, z) == doctest::Approx(expect).epsilon(1e-12));
                    }
        }
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    const double h = 1e-5;
    Rng rng(derive_seed(33, "fd", 0));

    auto batch_for = [&](std::array<int, 3> dims, int n) {
        std::vector<VoxelGrid> grids;
        for (int i = 0; i < n; ++i) grids.push_back(random_grid(dims, rng, 0.05f, 1.0f));
        return grids;
    };
    Eigen::VectorXd labels(3);
    labels << 1.0, 0.0, 1.0;

    SUBCASE("two-conv micro network (the headline check)") {
        CnnArchitecture arch;
        arch.input_dims = {4, 4, 2};
        arch.layers = {conv3d(2), conv3d(2), flatten(), dense(1, Activation::Sigmoid)};
        Network<double> net(arch, 5);
        const auto grids = batch_for(arch.input_dims, 3);
        CHECK(max_fd_rel_error(net, ptrs(grids), labels, h) < 1e-3);
    }
    SUBCASE("conv layer in isolation, including its L2 term") {
        CnnArchitecture arch;
        arch.input_dims = {4, 4, 2};
        arch.layers = {conv3d(2), flatten(), dense(1, Activation::Sigmoid)};
        Network<double> net(arch, 6);
        CHECK(net.l2_penalty() > 0.0); // conv carries weight decay 0.01
        const auto grids = batch_for(arch.input_dims, 3);
        CHECK(max_fd_rel_error(net, ptrs(grids), labels, h) < 1e-3);
    }
    SUBCASE("max pooling at non-tied maxima") {
        CnnArchitecture arch;
        arch.input_dims = {4, 4, 2};
        arch.layers = {conv3d(2), maxpool3d(), flatten(), dense(1, Activation::Sigmoid)};
        Network<double> net(arch, 12);
        const auto grids = batch_for(arch.input_dims, 3);
        CHECK(max_fd_rel_error(net, ptrs(grids), labels, h) < 1e-3);
    }
    SUBCASE("dense stack in isolation") {
        CnnArchitecture arch;
        arch.input_dims = {2, 2, 2};
        arch.layers = {flatten(), dense(4, Activation::ReLU), dense(1, Activation::Sigmoid)};
        Network<double> net(arch, 13);
        const auto grids = batch_for(arch.input_dims, 3);
        CHECK(max_fd_rel_error(net, ptrs(grids), labels, h) < 1e-3);
    }
    SUBCASE("fused sigmoid head alone") {
        CnnArchitecture arch;
        arch.input_dims = {2, 2, 2};
        arch.layers = {flatten(), dense(1, Activation::Sigmoid)};
        Network<double> net(arch, 14);
        const auto grids = batch_for(arch.input_dims, 3);
        CHECK(max_fd_rel_error(net, ptrs(grids), labels, h) < 1e-3);
    }
}

TEST_CASE("initial loss sits near ln 2 for balanced classes") {
    Network<float> net(tiny_architecture(), 17);
    Rng rng(derive_seed(17, "ln2", 0));
    std::vector<VoxelGrid> grids;
    Eigen::VectorXd labels(20);
    for (int i = 0; i < 20; ++i) {
        grids.push_back(random_grid({8, 8, 4}, rng));
        labels[i] = i % 2;
    }
    const double ln2 = std::log(2.0);
    const double bce0 = net.compute_loss(ptrs(grids), labels) - net.l2_penalty();
    CHECK(std::abs(bce0 - ln2) < 0.2);

    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 17;
    const auto history = net.train(ptrs(grids), labels, cfg);
    REQUIRE(history.bce.size() == 1);
    REQUIRE(history.penalty.size() == 1);
    CHECK(std::abs(history.bce[0] - ln2) < 0.2);
}

TEST_CASE("training memorizes sixteen synthetic nodules") {
    Rng rng(derive_seed(99, "overfit", 0));
    std::vector<VoxelGrid> grids;
    Eigen::VectorXd labels(16);
    for (int i = 0; i < 16; ++i) {
        const bool big = i % 2 == 1;
        grids.push_back(ball_grid(big ? 8.0 : 4.0, rng));
        labels[i] = big ? 1.0 : 0.0;
    }

    Network<float> net(small_architecture(), 7);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.seed = 7;
    const auto history = net.train(ptrs(grids), labels, cfg);
    REQUIRE(history.bce.size() == 200);
    REQUIRE(history.penalty.size() == 200);
    CHECK(history.bce.back() < history.bce.front()); // trending downward

    const auto p = net.predict_proba(ptrs(grids));
    int correct = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if ((p[i] > 0.5) == (labels[i] > 0.5)) ++correct;
    const double accuracy = static_cast<double>(correct) / 16.0;
    CAPTURE(history.bce.front());
    CAPTURE(history.bce.back());
    CHECK(accuracy >= 0.95);

    SUBCASE("one-voxel translation perturbs the output only boundedly") {
        VoxelGrid shifted = grids[0];
        for (int z = 0; z < shifted.dims[2]; ++z)
            for (int y = 0; y < shifted.dims[1]; ++y)
                for (int x = shifted.dims[0] - 1; x >= 1; --x)
                    shifted.at(x, y, z) = grids[0].at(x - 1, y, z);
        const auto pair = net.predict_proba({&grids[0], &shifted});
        CHECK(std::isfinite(pair[0]));
        CHECK(std::isfinite(pair[1]));
        CHECK(pair[1] > 0.0);
        CHECK(pair[1] < 1.0);
    }
}

TEST_CASE("training is deterministic per seed") {
    Rng rng(derive_seed(41, "det", 0));
    std::vector<VoxelGrid> grids;
    Eigen::VectorXd labels(10);
    for (int i = 0; i < 10; ++i) {
        grids.push_back(random_grid({8, 8, 4}, rng));
        labels[i] = i % 2;
    }
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 4;
    cfg.seed = 123;

    Network<float> a(tiny_architecture(), 9), b(tiny_architecture(), 9);
    const auto ha = a.train(ptrs(grids), labels, cfg);
    const auto hb = b.train(ptrs(grids), labels, cfg);
    CHECK(ha.bce == hb.bce);
    CHECK(ha.penalty == hb.penalty);
    const auto pa = a.predict_proba(ptrs(grids));
    const auto pb = b.predict_proba(ptrs(grids));
    CHECK(pa == pb);

    // A different shuffle seed must actually change the trajectory.
    Network<float> c(tiny_architecture(), 9);
    TrainConfig cfg2 = cfg;
    cfg2.seed = 124;
    const auto hc = c.train(ptrs(grids), labels, cfg2);
    CHECK(hc.bce != ha.bce);
}

TEST_CASE("training rejects bad configs and degenerate batches") {
    Network<float> net(tiny_architecture(), 2);
    Rng rng(derive_seed(2, "cfg", 0));
    std::vector<VoxelGrid> grids;
    Eigen::VectorXd labels(4);
    for (int i = 0; i < 4; ++i) {
        grids.push_back(random_grid({8, 8, 4}, rng));
        labels[i] = i % 2;
    }
    TrainConfig cfg;

    SUBCASE("batch_size must be positive") {
        cfg.batch_size = 0;
        CHECK_THROWS_AS(net.train(ptrs(grids), labels, cfg), std::invalid_argument);
    }
    SUBCASE("learning_rate must be positive") {
        cfg.learning_rate = 0.0;
        CHECK_THROWS_AS(net.train(ptrs(grids), labels, cfg), std::invalid_argument);
    }
    SUBCASE("single-class labels are rejected") {
        labels.setOnes();
        const auto msg = thrown_message<std::invalid_argument>(
            [&] { net.train(ptrs(grids), labels, cfg); });
        CHECK(msg.find("degenerate labels") != std::string::npos);
    }
    SUBCASE("empty batch") {
        CHECK_THROWS_AS(net.compute_loss({}, Eigen::VectorXd()), std::invalid_argument);
    }
    SUBCASE("label count mismatch") {
        Eigen::VectorXd three(3);
        three << 0, 1, 0;
        CHECK_THROWS_AS(net.compute_loss(ptrs(grids), three), std::invalid_argument);
    }
    SUBCASE("wrong grid dims") {
        const VoxelGrid odd = VoxelGrid::zeros({16, 16, 16}, {1, 1, 1}, GridKind::Intensity);
        const auto msg =
            thrown_message<std::invalid_argument>([&] { (void)net.predict_proba({&odd}); });
        CHECK(msg.find("do not match network input") != std::string::npos);
    }
    SUBCASE("training needs a single-unit sigmoid head") {
        CnnArchitecture arch;
        arch.input_dims = {8, 8, 4};
        arch.layers = {flatten(), dense(1, Activation::Linear)};
        Network<float> linear_head(arch, 0);
        const auto msg = thrown_message<std::invalid_argument>(
            [&] { linear_head.train(ptrs(grids), labels, cfg); });
        CHECK(msg.find("sigmoid") != std::string::npos);
    }
}

TEST_CASE("divergent training aborts with learning-rate guidance") {
    Network<float> net(tiny_architecture(), 31);
    Rng rng(derive_seed(31, "diverge", 0));
    std::vector<VoxelGrid> grids;
    Eigen::VectorXd labels(4);
    for (int i = 0; i < 4; ++i) {
        grids.push_back(random_grid({8, 8, 4}, rng));
        labels[i] = i % 2;
    }
    TrainConfig cfg;
    cfg.learning_rate = 1e20; // absurd on purpose: overflow to NaN in a step or two
    cfg.batch_size = 2;
    cfg.epochs = 5;
    const auto msg =
        thrown_message<std::runtime_error>([&] { net.train(ptrs(grids), labels, cfg); });
    CHECK(msg.find("training diverged") != std::string::npos);
    CHECK(msg.find("reduce learning_rate") != std::string::npos);
}

TEST_CASE("deep features are the penultimate dense activations") {
    Network<float> net(small_architecture(), 19);
    Rng rng(derive_seed(19, "feat", 0));
    const VoxelGrid g = random_grid({32, 32, 16}, rng);
    const VoxelGrid g2 = random_grid({32, 32, 16}, rng);

    const Eigen::VectorXd f = net.extract_features(g);
    REQUIRE(f.size() == 64);
    CHECK(f.size() == net.feature_dim());
    for (Eigen::Index i = 0; i < f.size(); ++i) {
        CHECK(std::isfinite(f[i]));
        CHECK(f[i] >= 0.0); // relu layer
    }
    CHECK(net.extract_features(g2) != f); // input-dependent

    // Applying the final dense head to the features must reproduce the
    // forward pass exactly (up to float evaluation order).
    const int head = net.layer_count() - 1;
    REQUIRE(net.layer_weights(head).rows() == 1);
    REQUIRE(net.layer_weights(head).cols() == 64);
    double logit = net.layer_bias(head)[0];
    for (Eigen::Index j = 0; j < 64; ++j)
        logit += static_cast<double>(net.layer_weights(head)(0, j)) * f[j];
    const auto p = net.predict_proba({&g});
    CHECK(std::abs(p[0] - 1.0 / (1.0 + std::exp(-logit))) < 1e-5);

    SUBCASE("wrong dims rejected") {
        const VoxelGrid odd = VoxelGrid::zeros({8, 8, 4}, {1, 1, 1}, GridKind::Intensity);
        CHECK_THROWS_AS(net.extract_features(odd), std::invalid_argument);
    }
}

TEST_CASE("checkpoints round-trip exactly") {
    const fs::path dir = fresh_dir("cnn3d_ckpt");
    CnnArchitecture arch;
    arch.input_dims = {8, 8, 4};
    arch.layers = {conv3d(3), maxpool3d(), conv3d(5), flatten(), dense(7, Activation::ReLU),
                   dense(1, Activation::Sigmoid)};

    Network<float> net(arch, 55);
    Rng rng(derive_seed(55, "ckpt", 0));
    std::vector<VoxelGrid> grids;
    Eigen::VectorXd labels(6);
    for (int i = 0; i < 6; ++i) {
        grids.push_back(random_grid({8, 8, 4}, rng));
        labels[i] = i % 2;
    }
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 3;
    cfg.seed = 55;
    net.train(ptrs(grids), labels, cfg); // make biases non-trivial

    const fs::path path = dir / "model.nfc";
    save_checkpoint(net, path);

    SUBCASE("file header carries magic, version, and the architecture") {
        const std::string bytes = slurp(path);
        REQUIRE(bytes.size() > 12);
        CHECK(bytes.substr(0, 4) == "NFC1");
        const auto u32 = [&](std::size_t off) {
            return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off])) |
                   static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 1])) << 8 |
                   static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 2])) << 16 |
                   static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 3])) << 24;
        };
        CHECK(u32(4) == 1u); // format version, little-endian
        const std::uint32_t header_len = u32(8);
        REQUIRE(bytes.size() > 12 + header_len);
        const auto header = nlohmann::json::parse(bytes.substr(12, header_len));
        CHECK(header.at("input_dims") == nlohmann::json({8, 8, 4}));
        CHECK(header.at("layers").is_array());
    }

    SUBCASE("loading restores weights, architecture, and predictions") {
        Network<float> loaded = load_checkpoint(path);
        CHECK(architecture_to_json(loaded.architecture()) == architecture_to_json(arch));
        REQUIRE(loaded.layer_count() == net.layer_count());
        for (int li = 0; li < net.layer_count(); ++li) {
            CHECK(loaded.layer_weights(li) == net.layer_weights(li));
            CHECK(loaded.layer_bias(li) == net.layer_bias(li));
        }
        CHECK(loaded.predict_proba(ptrs(grids)) == net.predict_proba(ptrs(grids)));

        // Saving the loaded model reproduces the file byte for byte.
        const fs::path again = dir / "model2.nfc";
        save_checkpoint(loaded, again);
        CHECK(slurp(again) == slurp(path));
    }

    SUBCASE("corrupted files are diagnosed precisely") {
        const std::string good = slurp(path);
        const fs::path bad = dir / "bad.nfc";

        SUBCASE("foreign magic") {
            std::string b = good;
            b[0] = 'X';
            spit(bad, b);
            const auto msg =
                thrown_message<UnsupportedSchemaError>([&] { (void)load_checkpoint(bad); });
            CHECK(msg.find("magic") != std::string::npos);
        }
        SUBCASE("future version") {
            std::string b = good;
            b[4] = 9;
            spit(bad, b);
            const auto msg =
                thrown_message<UnsupportedSchemaError>([&] { (void)load_checkpoint(bad); });
            CHECK(msg.find("version") != std::string::npos);
        }
        SUBCASE("truncation") {
            spit(bad, good.substr(0, good.size() - 3));
            const auto msg = thrown_message<DataError>([&] { (void)load_checkpoint(bad); });
            CHECK(msg.find("truncated") != std::string::npos);
        }
        SUBCASE("trailing bytes") {
            spit(bad, good + std::string(4, '\0'));
            const auto msg = thrown_message<DataError>([&] { (void)load_checkpoint(bad); });
            CHECK(msg.find("trailing") != std::string::npos);
        }
        SUBCASE("missing file") {
            CHECK_THROWS_AS((void)load_checkpoint(dir / "nope.nfc"), DataError);
        }
    }

    fs::remove_all(dir);
}

TEST_CASE("architecture JSON round-trips and rejects unknown fields") {
    const CnnArchitecture arch = default_architecture();
    const nlohmann::json j = architecture_to_json(arch);
    const CnnArchitecture back = architecture_from_json(j);
    CHECK(architecture_to_json(back) == j);

    // Same seed + same architecture = same network, whichever path built it.
    Network<float> a(small_architecture(), 4);
    Network<float> b(architecture_from_json(architecture_to_json(small_architecture())), 4);
    for (int li = 0; li < a.layer_count(); ++li) CHECK(a.layer_weights(li) == b.layer_weights(li));

    SUBCASE("unknown layer kind") {
        nlohmann::json doc = architecture_to_json(small_architecture());
        doc["layers"][0]["kind"] = "conv2d";
        const auto msg = thrown_message<DataError>([&] { (void)architecture_from_json(doc); });
        CHECK(msg.find("unknown layer kind") != std::string::npos);
    }
    SUBCASE("unknown activation") {
        nlohmann::json doc = architecture_to_json(small_architecture());
        doc["layers"][0]["activation"] = "tanh";
        const auto msg = thrown_message<DataError>([&] { (void)architecture_from_json(doc); });
        CHECK(msg.find("unknown activation") != std::string::npos);
    }
    SUBCASE("input_dims must have three entries") {
        nlohmann::json doc = architecture_to_json(small_architecture());
        doc["input_dims"] = {32, 32};
        const auto msg = thrown_message<DataError>([&] { (void)architecture_from_json(doc); });
        CHECK(msg.find("input_dims") != std::string::npos);
    }
}
