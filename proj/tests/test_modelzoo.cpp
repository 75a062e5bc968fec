#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "matkit/core/rng.hpp"
#include "matkit/modelzoo/network.hpp"

using namespace matkit;

namespace {

BlockMlpSpec small_mlp() {
    BlockMlpSpec s;
    s.d_in = 3;
    s.layers = 2;
    s.blocks_per_layer = 2;
    s.width = 3;
    s.outputs = 2;
    return s;
}

TinyConvSpec small_conv() {
    TinyConvSpec s;
    s.in_len = 6;
    s.channels = 4;
    s.groups = 2;
    s.layers = 2;
    s.outputs = 2;
    return s;
}

TinyAttentionSpec small_attn() {
    TinyAttentionSpec s;
    s.vocab = 5;
    s.seq_len = 4;
    s.d_model = 6;
    s.heads = 2;
    s.layers = 2;
    return s;
}

Matrix random_inputs(const ModularNetwork& net, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Matrix x(n, net.input_width());
    const bool tokens = net.architecture() == Architecture::TinyAttention;
    std::size_t vocab = 0;
    if (tokens) vocab = std::get<TinyAttentionSpec>(net.arch_spec()).vocab;
    for (std::size_t i = 0; i < x.size(); ++i)
        x.data()[i] = tokens ? static_cast<double>(rng.uniform_index(vocab + 1))
                             : rng.uniform(-1.5, 1.5);
    return x;
}

double scalarized_output(const ModularNetwork& net, const Matrix& x, Scalarization mode,
                         std::size_t row) {
    Matrix z = forward(net, x).outputs;
    if (mode == Scalarization::SumOfLogits) {
        double s = 0.0;
        for (std::size_t j = 0; j < z.cols(); ++j) s += z.at(row, j);
        return s;
    }
    return z.at(row / z.cols(), row % z.cols());
}

constexpr double kFdStep = 1e-5;

// Central finite difference of the scalarized output w.r.t. one parameter.
double fd_output(ModularNetwork net, const Matrix& x, Scalarization mode, std::size_t row,
                 std::size_t param) {
    const double base = net.parameters()[param];
    net.parameters()[param] = base + kFdStep;
    const double hi = scalarized_output(net, x, mode, row);
    net.parameters()[param] = base - kFdStep;
    const double lo = scalarized_output(net, x, mode, row);
    return (hi - lo) / (2.0 * kFdStep);
}

double fd_loss(ModularNetwork net, const Batch& batch, LossKind kind, std::size_t param) {
    const double base = net.parameters()[param];
    net.parameters()[param] = base + kFdStep;
    const double hi = loss_and_gradients(net, batch, kind).loss;
    net.parameters()[param] = base - kFdStep;
    const double lo = loss_and_gradients(net, batch, kind).loss;
    return (hi - lo) / (2.0 * kFdStep);
}

void check_close(double got, double want) {
    const double tol = std::max(1e-6 * std::fabs(want), 5e-8);
    CHECK(std::fabs(got - want) <= tol);
}

} // namespace

TEST_CASE("module partition shapes and determinism") {
    BlockMlpSpec mspec;
    mspec.d_in = 4;
    mspec.layers = 2;
    mspec.blocks_per_layer = 2;
    mspec.width = 8;
    ModularNetwork mlp = build_network(mspec, 7);
    CHECK(mlp.module_count() == 4);
    CHECK(mlp.layer_count() == 2);

    TinyAttentionSpec aspec;
    aspec.d_model = 16;
    aspec.heads = 4;
    aspec.layers = 2;
    ModularNetwork attn = build_network(aspec, 7);
    CHECK(attn.module_count() == 8);
    for (const auto& m : attn.modules()) CHECK(m.slice.len == 4 * 16 * 4);

    // Slices are contiguous, non-overlapping, and cover the modular prefix.
    for (const ModularNetwork* net : {&mlp, &attn}) {
        std::size_t cursor = 0;
        for (const auto& m : net->modules()) {
            CHECK(m.slice.begin == cursor);
            cursor += m.slice.len;
        }
        CHECK(cursor == net->modular_param_count());
        CHECK(net->always_active_slice().begin == cursor);
        CHECK(net->always_active_slice().len == net->param_count() - cursor);
    }

    // Same spec + seed rebuilds bit-identically; another seed differs.
    ModularNetwork again = build_network(mspec, 7);
    CHECK(again.parameters() == mlp.parameters());
    CHECK(again.theta0() == mlp.theta0());
    ModularNetwork other = build_network(mspec, 8);
    CHECK(other.parameters() != mlp.parameters());

    CHECK_THROWS_AS(mlp.module({9, 9}), LookupError);
}

TEST_CASE("single linear module contract") {
    BlockMlpSpec s;
    s.d_in = 1;
    s.layers = 1;
    s.blocks_per_layer = 1;
    s.width = 1;
    s.outputs = 1;
    s.use_bias = false;
    s.activation = Activation::Identity;
    ModularNetwork net = build_network(s, 1);
    REQUIRE(net.param_count() == 2);
    REQUIRE(net.modular_param_count() == 1);

    net.parameters() = {2.0, 1.0}; // module weight 2, readout 1
    Matrix x(1, 1, {3.0});
    Matrix z = forward(net, x).outputs;
    CHECK(z.at(0, 0) == 6.0);

    net.parameters() = {1.0, 1.0};
    Matrix samples(2, 1, {1.0, 2.0});
    JacobianBlock jac = module_jacobian(net, samples, {0, 0}, Scalarization::SumOfLogits);
    REQUIRE(jac.values.rows() == 2);
    REQUIRE(jac.values.cols() == 1);
    CHECK(jac.values.at(0, 0) == 1.0);
    CHECK(jac.values.at(1, 0) == 2.0);

    net.set_always_active_mode(AlwaysActiveMode::Frozen);
    Batch batch{Matrix(1, 1, {1.0}), Matrix(1, 1, {0.0})};
    GradientResult g = loss_and_gradients(net, batch, LossKind::SquaredError);
    CHECK(g.loss == 0.5);
    CHECK(g.output_grad.at(0, 0) == 1.0);
    CHECK(g.per_module.at({0, 0})[0] == 1.0);
    CHECK(g.always_active.empty());
}

TEST_CASE("zero input through bias-free tanh network gives zero output") {
    BlockMlpSpec s = small_mlp();
    s.use_bias = false;
    ModularNetwork net = build_network(s, 3);
    Matrix x(2, 3);
    Matrix z = forward(net, x).outputs;
    for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("jacobian rows match finite differences") {
    auto check_arch = [](const ArchSpecVariant& spec, std::uint64_t seed) {
        ModularNetwork net = build_network(spec, seed);
        Matrix x = random_inputs(net, 3, seed * 31 + 1);

        for (Scalarization mode : {Scalarization::SumOfLogits, Scalarization::FullOutput}) {
            JacobianSet set = all_module_jacobians(net, x, mode);
            REQUIRE(set.blocks.size() == net.module_count());
            const std::size_t rows =
                mode == Scalarization::SumOfLogits ? 3 : 3 * net.output_width();
            // Spot-check a deterministic spread of entries per block.
            for (const auto& block : set.blocks) {
                REQUIRE(block.values.rows() == rows);
                const ParamSlice slice = net.module(block.module).slice;
                for (std::size_t row = 0; row < rows; row += std::max<std::size_t>(1, rows / 4))
                    for (std::size_t j = 0; j < slice.len;
                         j += std::max<std::size_t>(1, slice.len / 5)) {
                        const double want = fd_output(net, x, mode, row, slice.begin + j);
                        check_close(block.values.at(row, j), want);
                    }
            }
        }
    };
    check_arch(small_mlp(), 11);
    check_arch(small_conv(), 12);
    check_arch(small_attn(), 13);
}

TEST_CASE("sum-of-logits jacobian equals summed full-output rows") {
    ModularNetwork net = build_network(small_attn(), 17);
    Matrix x = random_inputs(net, 2, 99);
    JacobianSet sum = all_module_jacobians(net, x, Scalarization::SumOfLogits);
    JacobianSet full = all_module_jacobians(net, x, Scalarization::FullOutput);
    const std::size_t k = net.output_width();
    for (std::size_t b = 0; b < sum.blocks.size(); ++b)
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < sum.blocks[b].values.cols(); ++j) {
                double acc = 0.0;
                for (std::size_t out = 0; out < k; ++out)
                    acc += full.blocks[b].values.at(i * k + out, j);
                CHECK(sum.blocks[b].values.at(i, j) == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("full-output row budget is enforced") {
    ModularNetwork net = build_network(small_attn(), 17); // k = 20
    Matrix x = random_inputs(net, 26, 5);                 // 26 * 20 = 520 > 512
    CHECK_THROWS_AS(all_module_jacobians(net, x, Scalarization::FullOutput), ValueError);
    CHECK_NOTHROW(all_module_jacobians(net, random_inputs(net, 25, 5), Scalarization::FullOutput));
}

TEST_CASE("loss gradients match finite differences") {
    struct Case {
        ArchSpecVariant spec;
        LossKind kind;
        std::uint64_t seed;
    };
    std::vector<Case> cases;
    cases.push_back({small_mlp(), LossKind::SquaredError, 21});
    cases.push_back({small_conv(), LossKind::SquaredError, 22});
    cases.push_back({small_attn(), LossKind::SoftmaxCrossEntropy, 23});

    for (const auto& c : cases) {
        ModularNetwork net = build_network(c.spec, c.seed);
        const std::size_t n = 3;
        Matrix x = random_inputs(net, n, c.seed + 100);
        Matrix y;
        if (c.kind == LossKind::SquaredError) {
            Rng rng(c.seed + 200);
            y = Matrix(n, net.output_width());
            for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform(-1.0, 1.0);
        } else {
            // One scored position per sample, rest ignored.
            const auto& spec = std::get<TinyAttentionSpec>(c.spec);
            y = Matrix(n, spec.seq_len);
            for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] = -1.0;
            Rng rng(c.seed + 200);
            for (std::size_t i = 0; i < n; ++i)
                y.at(i, rng.uniform_index(spec.seq_len)) =
                    static_cast<double>(rng.uniform_index(spec.vocab));
        }
        Batch batch{x, y};

        GradientResult g = loss_and_gradients(net, batch, c.kind);
        // Gradient entries laid back into a flat vector for comparison.
        std::vector<double> flat(net.param_count(), 0.0);
        for (const auto& [id, vec] : g.per_module) {
            const ParamSlice slice = net.module(id).slice;
            for (std::size_t j = 0; j < slice.len; ++j) flat[slice.begin + j] = vec[j];
        }
        const ParamSlice tail = net.always_active_slice();
        REQUIRE(g.always_active.size() == tail.len);
        for (std::size_t j = 0; j < tail.len; ++j) flat[tail.begin + j] = g.always_active[j];

        for (std::size_t p = 0; p < net.param_count();
             p += std::max<std::size_t>(1, net.param_count() / 60)) {
            const double want = fd_loss(net, batch, c.kind, p);
            check_close(flat[p], want);
        }
    }
}

TEST_CASE("masked gradient accumulation matches the full backward slice") {
    ModularNetwork net = build_network(small_mlp(), 31);
    Matrix x = random_inputs(net, 4, 77);
    Rng rng(78);
    Matrix y(4, 2);
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform(-1.0, 1.0);
    Batch batch{x, y};

    GradientResult full = loss_and_gradients(net, batch, LossKind::SquaredError);
    std::vector<ModuleId> active{{0, 1}, {1, 0}};
    GradientResult masked = loss_and_gradients(net, batch, LossKind::SquaredError, &active);

    CHECK(masked.loss == full.loss);
    for (const auto& m : net.modules()) {
        const bool is_active = m.id == ModuleId{0, 1} || m.id == ModuleId{1, 0};
        const auto& got = masked.per_module.at(m.id);
        if (is_active) {
            CHECK(got == full.per_module.at(m.id)); // bit-identical
        } else {
            for (double v : got) CHECK(v == 0.0);
        }
    }
    CHECK(masked.always_active == full.always_active);
}

TEST_CASE("apply_selective_step semantics") {
    ModularNetwork net = build_network(small_mlp(), 41);
    Matrix x = random_inputs(net, 4, 88);
    Rng rng(89);
    Matrix y(4, 2);
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform(-1.0, 1.0);
    GradientResult g = loss_and_gradients(net, {x, y}, LossKind::SquaredError);

    SUBCASE("empty active set is a complete no-op") {
        std::vector<double> before = net.parameters();
        apply_selective_step(net, g, {}, 0.1);
        CHECK(net.parameters() == before);
    }

    SUBCASE("only active modules and the tail move") {
        std::vector<double> before = net.parameters();
        apply_selective_step(net, g, {{0, 0}}, 0.1);
        const ParamSlice moved = net.module({0, 0}).slice;
        const ParamSlice tail = net.always_active_slice();
        for (std::size_t j = 0; j < moved.len; ++j)
            CHECK(net.parameters()[moved.begin + j] ==
                  before[moved.begin + j] - 0.1 * g.per_module.at({0, 0})[j]);
        for (const auto& m : net.modules()) {
            if (m.id == ModuleId{0, 0}) continue;
            for (std::size_t j = 0; j < m.slice.len; ++j)
                CHECK(net.parameters()[m.slice.begin + j] == before[m.slice.begin + j]);
        }
        for (std::size_t j = 0; j < tail.len; ++j)
            CHECK(net.parameters()[tail.begin + j] ==
                  before[tail.begin + j] - 0.1 * g.always_active[j]);
    }

    SUBCASE("frozen tail stays put") {
        net.set_always_active_mode(AlwaysActiveMode::Frozen);
        GradientResult gf = loss_and_gradients(net, {x, y}, LossKind::SquaredError);
        std::vector<double> before = net.parameters();
        apply_selective_step(net, gf, {{0, 0}}, 0.1);
        const ParamSlice tail = net.always_active_slice();
        for (std::size_t j = 0; j < tail.len; ++j)
            CHECK(net.parameters()[tail.begin + j] == before[tail.begin + j]);
    }

    SUBCASE("unknown module throws") {
        CHECK_THROWS_AS(apply_selective_step(net, g, {{7, 7}}, 0.1), LookupError);
    }
}

TEST_CASE("attention input validation") {
    ModularNetwork net = build_network(small_attn(), 51);
    Matrix bad(1, 4, {0.5, 1.0, 2.0, 3.0});
    CHECK_THROWS_AS(forward(net, bad), ShapeError);
    Matrix oob(1, 4, {0.0, 1.0, 2.0, 6.0}); // vocab=5, mask id 5 is max
    CHECK_THROWS_AS(forward(net, oob), ShapeError);
    Matrix mask_ok(1, 4, {0.0, 1.0, 2.0, 5.0});
    CHECK_NOTHROW(forward(net, mask_ok));

    TinyAttentionSpec big = small_attn();
    big.vocab = 33;
    CHECK_THROWS_AS(build_network(big, 1), SpecError);
    TinyAttentionSpec long_seq = small_attn();
    long_seq.seq_len = 17;
    CHECK_THROWS_AS(build_network(long_seq, 1), SpecError);
    TinyAttentionSpec uneven = small_attn();
    uneven.heads = 4; // d_model 6 does not divide
    CHECK_THROWS_AS(build_network(uneven, 1), SpecError);
}

TEST_CASE("pruned module equals zeroed-parameters oracle") {
    auto check_arch = [](const ArchSpecVariant& spec, std::uint64_t seed) {
        ModularNetwork pruned_net = build_network(spec, seed);
        ModularNetwork zeroed_net = build_network(spec, seed);
        const ModuleId victim{0, 1};
        pruned_net.prune({victim});
        const ParamSlice slice = zeroed_net.module(victim).slice;
        for (std::size_t j = 0; j < slice.len; ++j) zeroed_net.parameters()[slice.begin + j] = 0.0;

        Matrix x = random_inputs(pruned_net, 4, seed + 1000);
        Matrix za = forward(pruned_net, x).outputs;
        Matrix zb = forward(zeroed_net, x).outputs;
        const double rel = frobenius_distance(za, zb) / std::max(frobenius_norm(zb), 1e-300);
        CHECK(rel <= 1e-12);
    };
    check_arch(small_mlp(), 61);
    check_arch(small_conv(), 62);
    check_arch(small_attn(), 63);
}

TEST_CASE("pruning bookkeeping") {
    ModularNetwork net = build_network(small_mlp(), 71);
    net.prune({{0, 0}});
    CHECK(net.is_pruned({0, 0}));
    CHECK(net.active_partition().size() == 3);
    CHECK(net.active_modular_params() ==
          net.modular_param_count() - net.module({0, 0}).slice.len);
    CHECK_THROWS_AS(net.prune({{0, 0}}), ValueError);
    CHECK_THROWS_AS(net.prune({{9, 9}}), LookupError);
    CHECK_THROWS_AS(module_jacobian(net, random_inputs(net, 2, 1), {0, 0},
                                    Scalarization::SumOfLogits),
                    LookupError);
    // Jacobians and gradients skip the pruned module entirely.
    JacobianSet set = all_module_jacobians(net, random_inputs(net, 2, 2),
                                           Scalarization::SumOfLogits);
    CHECK(set.blocks.size() == 3);
    std::vector<ModuleId> bad{{0, 0}};
    CHECK_THROWS_AS(loss_and_gradients(net, {random_inputs(net, 2, 3), Matrix(2, 2)},
                                       LossKind::SquaredError, &bad),
                    LookupError);
}

TEST_CASE("forward flop counts match the dense-product formulas") {
    const std::size_t n = 5;

    ModularNetwork mlp = build_network(small_mlp(), 81);
    FlopsCount f = forward(mlp, random_inputs(mlp, n, 1)).flops;
    // layer 0: 2 blocks of width 3 reading 3 inputs; layer 1: reading 6.
    CHECK(f.modular == n * (2 * 3 * 3 + 2 * 3 * 6));
    CHECK(f.always == n * 2 * 6);

    ModularNetwork conv = build_network(small_conv(), 82);
    f = forward(conv, random_inputs(conv, n, 2)).flops;
    // layer 0: 2 groups, 2 channels each, c_in 1, taps 3, length 6.
    CHECK(f.modular == n * (2 * 6 * 2 * 1 * 3 + 2 * 6 * 2 * 4 * 3));
    CHECK(f.always == n * 2 * 4);

    ModularNetwork attn = build_network(small_attn(), 83);
    f = forward(attn, random_inputs(attn, n, 3)).flops;
    // per head: 4*T*D*dh + 2*T^2*dh with T=4, D=6, dh=3.
    CHECK(f.modular == n * 4 * (4 * 4 * 6 * 3 + 2 * 4 * 4 * 3));
    CHECK(f.always == n * 4 * 6 * 5);

    // Pruning removes the module's share.
    conv.prune({{1, 0}});
    f = forward(conv, random_inputs(conv, n, 2)).flops;
    CHECK(f.modular == n * (2 * 6 * 2 * 1 * 3 + 1 * 6 * 2 * 4 * 3));
}

TEST_CASE("non-finite propagation raises NumericError with the sample index") {
    ModularNetwork net = build_network(small_mlp(), 91);
    net.parameters()[0] = std::numeric_limits<double>::quiet_NaN();
    Matrix x = random_inputs(net, 3, 4);
    try {
        forward(net, x);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(e.sample_index() == 0);
    }
}

TEST_CASE("gradient results are deterministic") {
    ModularNetwork net = build_network(small_attn(), 101);
    Matrix x = random_inputs(net, 4, 201);
    Matrix y(4, 4);
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] = -1.0;
    y.at(0, 1) = 2.0;
    y.at(1, 0) = 3.0;
    y.at(2, 3) = 1.0;
    y.at(3, 2) = 0.0;
    GradientResult a = loss_and_gradients(net, {x, y}, LossKind::SoftmaxCrossEntropy);
    GradientResult b = loss_and_gradients(net, {x, y}, LossKind::SoftmaxCrossEntropy);
    CHECK(a.loss == b.loss);
    for (const auto& [id, vec] : a.per_module) CHECK(vec == b.per_module.at(id));
    CHECK(a.always_active == b.always_active);
}
