#include "matkit/cli/runspec.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace matkit {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& want) {
    throw SpecError("key '" + key + "': cannot parse '" + value + "' as " + want);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
    return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(to_u64(key, v));
}

double to_double(const std::string& key, const std::string& v) {
    if (v.empty()) bad_value(key, v, "a number");
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size()) bad_value(key, v, "a number");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "on" || v == "true") return true;
    if (v == "off" || v == "false") return false;
    bad_value(key, v, "a boolean (on/off/true/false)");
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "on" : "off"; }

Scalarization parse_scalarization(const std::string& v) {
    if (v == "sum") return Scalarization::SumOfLogits;
    if (v == "full") return Scalarization::FullOutput;
    throw SpecError("key 'scalarization': expected sum or full, got '" + v + "'");
}

std::string to_string(Scalarization s) {
    return s == Scalarization::SumOfLogits ? "sum" : "full";
}

Activation parse_activation(const std::string& v) {
    if (v == "tanh") return Activation::Tanh;
    if (v == "identity") return Activation::Identity;
    throw SpecError("key 'activation': expected tanh or identity, got '" + v + "'");
}

// Builds the architecture descriptor, wiring input-facing dimensions from the
// dataset and checking the pairing makes sense.
ArchSpecVariant finalize_model(const ModelFields& m, const DataSpec& d) {
    const bool token_data = d.kind == "token-mask";
    if (m.arch == "tiny-attention") {
        if (!token_data)
            throw SpecError("tiny-attention requires the token-mask dataset");
        return TinyAttentionSpec{d.vocab, d.seq_len, m.d_model, m.heads, m.layers};
    }
    if (token_data)
        throw SpecError("token-mask dataset requires the tiny-attention model");
    const std::size_t d_in = d.kind == "spiral" ? 2 : d.d_in;
    if (m.arch == "block-mlp")
        return BlockMlpSpec{d_in,      m.layers, m.blocks,
                            m.width,   m.outputs, m.bias,
                            parse_activation(m.activation)};
    if (m.arch == "tiny-conv")
        return TinyConvSpec{d_in, m.channels, m.groups, m.layers, m.outputs, m.bias};
    throw SpecError("key 'arch': unknown architecture '" + m.arch + "'");
}

} // namespace

PolicyKind parse_policy_kind(const std::string& name) {
    if (name == "vanilla") return PolicyKind::Vanilla;
    if (name == "rand") return PolicyKind::Rand;
    if (name == "multirate") return PolicyKind::Multirate;
    if (name == "mat") return PolicyKind::Mat;
    throw SpecError("unknown policy '" + name + "'");
}

std::string to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::Vanilla: return "vanilla";
        case PolicyKind::Rand: return "rand";
        case PolicyKind::Multirate: return "multirate";
        case PolicyKind::Mat: return "mat";
    }
    return "?";
}

void DataSpec::validate() const {
    if (kind != "teacher-student" && kind != "spiral" && kind != "token-mask")
        throw SpecError("key 'kind': unknown dataset '" + kind + "'");
    if (n_train < 4 || n_val < 4) throw SpecError("dataset splits must have at least 4 samples");
    if (!std::isfinite(noise) || noise < 0.0) throw SpecError("noise must be nonnegative");
    if (!std::isfinite(turns) || turns <= 0.0) throw SpecError("turns must be positive");
    if (d_in == 0) throw SpecError("d_in must be positive");
    if (vocab < 2 || vocab > 32) throw SpecError("vocab must be in [2, 32]");
    if (seq_len < 2 || seq_len > 16) throw SpecError("seq_len must be in [2, 16]");
    if (!(mask_rate > 0.0) || mask_rate >= 1.0) throw SpecError("mask_rate must be in (0, 1)");
}

void RunSpec::validate() const {
    if (name.empty()) throw SpecError("run name must not be empty");
    data.validate();
    train.validate();
}

RunSpec parse_run_spec(const std::string& text) {
    RunSpec spec;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;

    auto fail = [&](const std::string& msg) {
        throw SpecError("line " + std::to_string(line_no) + ": " + msg);
    };

    while (std::getline(in, raw)) {
        ++line_no;
        const std::size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') fail("unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "run" && section != "data" && section != "model" &&
                section != "train" && section != "policy" && section != "multirate" &&
                section != "rand")
                fail("unknown section '" + section + "'");
            continue;
        }

        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail("expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail("empty key");
        if (section.empty()) fail("key '" + key + "' outside any section");

        try {
            if (section == "run") {
                if (key == "name") spec.name = value;
                else if (key == "seed") spec.train.seed = to_u64(key, value);
                else if (key == "policy") spec.train.policy = parse_policy_kind(value);
                else fail("unknown key '" + key + "' in [run]");
            } else if (section == "data") {
                DataSpec& d = spec.data;
                if (key == "kind") d.kind = value;
                else if (key == "n_train") d.n_train = to_size(key, value);
                else if (key == "n_val") d.n_val = to_size(key, value);
                else if (key == "d_in") d.d_in = to_size(key, value);
                else if (key == "noise") d.noise = to_double(key, value);
                else if (key == "turns") d.turns = to_double(key, value);
                else if (key == "vocab") d.vocab = to_size(key, value);
                else if (key == "seq_len") d.seq_len = to_size(key, value);
                else if (key == "mask_rate") d.mask_rate = to_double(key, value);
                else fail("unknown key '" + key + "' in [data]");
            } else if (section == "model") {
                ModelFields& m = spec.model_fields;
                if (key == "arch") m.arch = value;
                else if (key == "layers") m.layers = to_size(key, value);
                else if (key == "blocks") m.blocks = to_size(key, value);
                else if (key == "width") m.width = to_size(key, value);
                else if (key == "outputs") m.outputs = to_size(key, value);
                else if (key == "bias") m.bias = to_bool(key, value);
                else if (key == "activation") m.activation = value;
                else if (key == "d_model") m.d_model = to_size(key, value);
                else if (key == "heads") m.heads = to_size(key, value);
                else if (key == "channels") m.channels = to_size(key, value);
                else if (key == "groups") m.groups = to_size(key, value);
                else fail("unknown key '" + key + "' in [model]");
            } else if (section == "train") {
                TrainConfig& t = spec.train;
                if (key == "lr") t.lr = to_double(key, value);
                else if (key == "clip") t.clip_norm = to_double(key, value);
                else if (key == "weight_decay") t.weight_decay = to_double(key, value);
                else if (key == "epochs") t.epochs = to_size(key, value);
                else if (key == "batch") t.batch_size = to_size(key, value);
                else if (key == "patience") t.patience = to_size(key, value);
                else if (key == "improve_tol") t.improve_tol = to_double(key, value);
                else if (key == "diag_snapshots") t.diag_snapshots = to_bool(key, value);
                else fail("unknown key '" + key + "' in [train]");
            } else if (section == "policy") {
                PolicyConfig& p = spec.train.policy_cfg;
                if (key == "alpha") p.alpha = to_double(key, value);
                else if (key == "beta") p.beta = to_double(key, value);
                else if (key == "samples") p.sample_count = to_size(key, value);
                else if (key == "warmup") p.warmup_epochs = to_size(key, value);
                else if (key == "cadence") p.cadence = to_size(key, value);
                else if (key == "sticky") p.sticky_temporal = to_bool(key, value);
                else if (key == "temporal") p.temporal_enabled = to_bool(key, value);
                else if (key == "protect") p.protect_per_layer = to_bool(key, value);
                else if (key == "scalarization") p.scalarization = parse_scalarization(value);
                else fail("unknown key '" + key + "' in [policy]");
            } else if (section == "multirate") {
                if (key == "slow_fraction")
                    spec.train.multirate.slow_fraction = to_double(key, value);
                else if (key == "slow_every")
                    spec.train.multirate.slow_every = to_size(key, value);
                else fail("unknown key '" + key + "' in [multirate]");
            } else { // rand
                if (key == "fraction") spec.train.rand_fraction = to_double(key, value);
                else fail("unknown key '" + key + "' in [rand]");
            }
        } catch (const SpecError& e) {
            // Re-tag value errors with the offending line.
            const std::string what = e.what();
            if (what.rfind("line ", 0) == 0) throw;
            fail(what);
        }
    }

    spec.train.loss = spec.data.kind == "token-mask" ? LossKind::SoftmaxCrossEntropy
                                                     : LossKind::SquaredError;
    spec.validate();
    spec.model = finalize_model(spec.model_fields, spec.data);
    return spec;
}

RunSpec load_run_spec(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read spec file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_spec(buf.str());
}

std::string resolved_echo(const RunSpec& spec) {
    const ModelFields& m = spec.model_fields;
    const DataSpec& d = spec.data;
    const TrainConfig& t = spec.train;
    const PolicyConfig& p = t.policy_cfg;
    std::ostringstream out;
    out << "[run]\n"
        << "name = " << spec.name << "\n"
        << "seed = " << fmt(t.seed) << "\n"
        << "policy = " << to_string(t.policy) << "\n\n";
    out << "[data]\n"
        << "kind = " << d.kind << "\n"
        << "n_train = " << d.n_train << "\n"
        << "n_val = " << d.n_val << "\n"
        << "d_in = " << d.d_in << "\n"
        << "noise = " << fmt(d.noise) << "\n"
        << "turns = " << fmt(d.turns) << "\n"
        << "vocab = " << d.vocab << "\n"
        << "seq_len = " << d.seq_len << "\n"
        << "mask_rate = " << fmt(d.mask_rate) << "\n\n";
    out << "[model]\n"
        << "arch = " << m.arch << "\n"
        << "layers = " << m.layers << "\n"
        << "blocks = " << m.blocks << "\n"
        << "width = " << m.width << "\n"
        << "outputs = " << m.outputs << "\n"
        << "bias = " << fmt(m.bias) << "\n"
        << "activation = " << m.activation << "\n"
        << "d_model = " << m.d_model << "\n"
        << "heads = " << m.heads << "\n"
        << "channels = " << m.channels << "\n"
        << "groups = " << m.groups << "\n\n";
    out << "[train]\n"
        << "lr = " << fmt(t.lr) << "\n"
        << "clip = " << fmt(t.clip_norm) << "\n"
        << "weight_decay = " << fmt(t.weight_decay) << "\n"
        << "epochs = " << t.epochs << "\n"
        << "batch = " << t.batch_size << "\n"
        << "patience = " << t.patience << "\n"
        << "improve_tol = " << fmt(t.improve_tol) << "\n"
        << "diag_snapshots = " << fmt(t.diag_snapshots) << "\n\n";
    out << "[policy]\n"
        << "alpha = " << fmt(p.alpha) << "\n"
        << "beta = " << fmt(p.beta) << "\n"
        << "samples = " << p.sample_count << "\n"
        << "warmup = " << p.warmup_epochs << "\n"
        << "cadence = " << p.cadence << "\n"
        << "sticky = " << fmt(p.sticky_temporal) << "\n"
        << "temporal = " << fmt(p.temporal_enabled) << "\n"
        << "protect = " << fmt(p.protect_per_layer) << "\n"
        << "scalarization = " << to_string(p.scalarization) << "\n\n";
    out << "[multirate]\n"
        << "slow_fraction = " << fmt(t.multirate.slow_fraction) << "\n"
        << "slow_every = " << t.multirate.slow_every << "\n\n";
    out << "[rand]\n"
        << "fraction = " << fmt(t.rand_fraction) << "\n";
    return out.str();
}

void apply_overrides(RunSpec& spec, const SpecOverrides& ov) {
    if (ov.seed) spec.train.seed = *ov.seed;
    if (ov.policy) spec.train.policy = parse_policy_kind(*ov.policy);
    if (ov.alpha) spec.train.policy_cfg.alpha = *ov.alpha;
    if (ov.beta) spec.train.policy_cfg.beta = *ov.beta;
    if (ov.samples) spec.train.policy_cfg.sample_count = *ov.samples;
    if (ov.epochs) spec.train.epochs = *ov.epochs;
    if (ov.warmup) spec.train.policy_cfg.warmup_epochs = *ov.warmup;
    if (ov.cadence) spec.train.policy_cfg.cadence = *ov.cadence;
    if (ov.sticky) spec.train.policy_cfg.sticky_temporal = *ov.sticky;
    spec.validate();
}

} // namespace matkit
