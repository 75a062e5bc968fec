#include "matkit/cli/datagen.hpp"

#include <cmath>

namespace matkit {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kJumpProb = 0.05;

Dataset teacher_student(const DataSpec& spec, std::uint64_t seed) {
    const BlockMlpSpec teacher_arch{spec.d_in, 1, 2, 8, 1, true, Activation::Tanh};
    const ModularNetwork teacher = build_network(teacher_arch, mix_seed(seed, "teacher"));

    Rng data_rng(mix_seed(seed, "inputs"));
    Rng noise_rng(mix_seed(seed, "noise"));
    auto draw = [&](std::size_t n) {
        Matrix x(n, spec.d_in);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < spec.d_in; ++j) x.at(i, j) = data_rng.uniform(-2.0, 2.0);
        return x;
    };
    auto label = [&](const Matrix& x) {
        Matrix y = forward(teacher, x).outputs;
        for (std::size_t i = 0; i < y.rows(); ++i)
            y.at(i, 0) += spec.noise * noise_rng.normal();
        return y;
    };

    Dataset ds;
    ds.name = "teacher-student";
    ds.seed = seed;
    ds.train_inputs = draw(spec.n_train);
    ds.val_inputs = draw(spec.n_val);
    ds.train_targets = label(ds.train_inputs);
    ds.val_targets = label(ds.val_inputs);
    return ds;
}

// Sample 2i+c is the i-th point of class c, so every even prefix is exactly
// balanced. Radius grows along the spiral; the two arms are offset by pi.
Dataset spiral(const DataSpec& spec, std::uint64_t seed) {
    Rng rng(mix_seed(seed, "spiral"));
    const std::size_t total = spec.n_train + spec.n_val;
    Matrix inputs(total, 2);
    Matrix targets(total, 1);
    const std::size_t per_class = (total + 1) / 2;
    for (std::size_t i = 0; i < total; ++i) {
        const std::size_t cls = i % 2;
        const std::size_t k = i / 2;
        const double u = (static_cast<double>(k) + 0.5) / static_cast<double>(per_class);
        const double angle = u * spec.turns * 2.0 * kPi + static_cast<double>(cls) * kPi;
        const double radius = 0.25 + 0.75 * u;
        inputs.at(i, 0) = radius * std::cos(angle) + spec.noise * rng.normal();
        inputs.at(i, 1) = radius * std::sin(angle) + spec.noise * rng.normal();
        targets.at(i, 0) = cls == 0 ? 1.0 : -1.0;
    }

    auto rows = [&](const Matrix& src, std::size_t begin, std::size_t n) {
        Matrix out(n, src.cols());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < src.cols(); ++j) out.at(i, j) = src.at(begin + i, j);
        return out;
    };

    Dataset ds;
    ds.name = "spiral";
    ds.seed = seed;
    ds.train_inputs = rows(inputs, 0, spec.n_train);
    ds.train_targets = rows(targets, 0, spec.n_train);
    ds.val_inputs = rows(inputs, spec.n_train, spec.n_val);
    ds.val_targets = rows(targets, spec.n_train, spec.n_val);
    return ds;
}

Dataset token_mask(const DataSpec& spec, std::uint64_t seed) {
    Rng seq_rng(mix_seed(seed, "sequences"));
    Rng mask_rng(mix_seed(seed, "masking"));
    const double expected = spec.mask_rate * static_cast<double>(spec.seq_len);
    const std::size_t base = static_cast<std::size_t>(std::floor(expected));
    const double extra_prob = expected - static_cast<double>(base);
    const double mask_id = static_cast<double>(spec.vocab);

    auto fill = [&](Matrix& x, Matrix& y) {
        for (std::size_t i = 0; i < x.rows(); ++i) {
            std::size_t tok = seq_rng.uniform_index(spec.vocab);
            for (std::size_t j = 0; j < spec.seq_len; ++j) {
                x.at(i, j) = static_cast<double>(tok);
                y.at(i, j) = -1.0;
                tok = seq_rng.uniform() < kJumpProb ? seq_rng.uniform_index(spec.vocab)
                                                    : (tok + 1) % spec.vocab;
            }
            std::size_t count = base;
            if (extra_prob > 0.0 && mask_rng.uniform() < extra_prob) ++count;
            if (count == 0) count = 1;
            for (std::size_t pos : mask_rng.sample_without_replacement(spec.seq_len, count)) {
                y.at(i, pos) = x.at(i, pos);
                x.at(i, pos) = mask_id;
            }
        }
    };

    Dataset ds;
    ds.name = "token-mask";
    ds.seed = seed;
    ds.train_inputs = Matrix(spec.n_train, spec.seq_len);
    ds.train_targets = Matrix(spec.n_train, spec.seq_len);
    ds.val_inputs = Matrix(spec.n_val, spec.seq_len);
    ds.val_targets = Matrix(spec.n_val, spec.seq_len);
    fill(ds.train_inputs, ds.train_targets);
    fill(ds.val_inputs, ds.val_targets);
    return ds;
}

} // namespace

Dataset generate_dataset(const DataSpec& spec, std::uint64_t seed) {
    spec.validate();
    if (spec.kind == "teacher-student") return teacher_student(spec, seed);
    if (spec.kind == "spiral") return spiral(spec, seed);
    return token_mask(spec, seed);
}

} // namespace matkit
