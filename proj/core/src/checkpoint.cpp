#include "silora/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace silora {

namespace {

constexpr char kMagic[8] = {'S', 'L', 'O', 'R', 'A', 'C', 'K', 'P'};

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
        }
    }

    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
        }
    }

    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void str(const std::string& s) {
        u64(s.size());
        buf_.append(s);
    }

    void matrix(const Matrix& m) {
        u64(m.rows());
        u64(m.cols());
        for (std::size_t i = 0; i < m.size(); ++i) {
            f64(m.data()[i]);
        }
    }

    void raw(const char* data, std::size_t n) { buf_.append(data, n); }

    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(const std::string& buf) : buf_(buf) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
        }
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
        }
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string str() {
        const std::uint64_t n = u64();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    Matrix matrix() {
        const std::uint64_t rows = u64();
        const std::uint64_t cols = u64();
        check(rows <= 1u << 20 && cols <= 1u << 20, "checkpoint: implausible matrix extents");
        Matrix m(rows, cols);
        for (std::size_t i = 0; i < m.size(); ++i) {
            m.data()[i] = f64();
        }
        return m;
    }

    void expect_magic() {
        need(sizeof(kMagic));
        check(std::memcmp(buf_.data() + pos_, kMagic, sizeof(kMagic)) == 0,
              "checkpoint: bad magic, not a checkpoint file");
        pos_ += sizeof(kMagic);
    }

    bool exhausted() const { return pos_ == buf_.size(); }

private:
    void need(std::uint64_t n) {
        check(pos_ + n <= buf_.size(), "checkpoint: truncated file");
    }

    const std::string& buf_;
    std::size_t pos_ = 0;
};

void write_adapter(ByteWriter& w, const LoraAdapter& a) {
    w.str(a.layer_id);
    w.u64(a.d_out());
    w.u64(a.d_in());
    w.u64(a.rank);
    w.f64(a.alpha);
    w.u8(static_cast<std::uint8_t>(a.scaling_mode));
    w.u64(fnv1a64(a.theta0.data(), a.theta0.size()));
    w.matrix(a.B);
    w.matrix(a.A);
}

} // namespace

std::uint64_t fnv1a64(const double* values, std::size_t count) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < count; ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

std::string serialize_checkpoint(const TrainState& state) {
    ByteWriter w;
    w.raw(kMagic, sizeof(kMagic));
    w.u32(kCheckpointVersion);

    w.u64(state.model_cfg.d_model);
    w.u64(state.model_cfg.n_blocks);
    w.u64(state.model_cfg.d_ff);
    w.u64(state.model_cfg.context_len);
    w.u64(state.model.vocab_size);
    w.u64(state.model.init_seed);

    w.str(state.task_spec.generator);
    w.u64(state.task_spec.seed);
    w.u64(state.task_spec.nu_train);
    w.u64(state.task_spec.nu_eval);
    w.u64(state.task_spec.mu_train);
    w.u64(state.task_spec.mu_eval);
    w.f64(state.task_spec.overlap);

    const TrainConfig& cfg = state.train_cfg;
    w.f64(cfg.eta);
    w.f64(cfg.phi);
    w.f64(cfg.xi);
    w.u64(cfg.rank);
    w.f64(cfg.alpha);
    w.u8(static_cast<std::uint8_t>(cfg.scaling_mode));
    w.u64(cfg.batch_size);
    w.u64(cfg.epochs_nu);
    w.u64(cfg.epochs_mu);
    w.u64(cfg.seed);
    w.u8(static_cast<std::uint8_t>(cfg.strategy));
    w.u8(static_cast<std::uint8_t>(cfg.optimizer_mode));

    const auto adapters = state.model.adapters();
    w.u64(adapters.size());
    for (const LoraAdapter* a : adapters) {
        write_adapter(w, *a);
    }

    w.u8(state.importance.task_open() ? 1 : 0);
    w.u8(state.importance.consolidated() ? 1 : 0);
    w.u64(state.importance.layer_count());
    for (std::size_t i = 0; i < state.importance.layer_count(); ++i) {
        const std::string& id = state.importance.layer_ids()[i];
        const LayerImportance& layer = state.importance.layers()[i];
        w.str(id);
        w.matrix(layer.omega);
        w.u8(layer.omega_is_live ? 1 : 0);
        w.matrix(layer.Omega);
        w.matrix(layer.theta_ref);
        w.matrix(layer.delta_total);
        w.matrix(layer.theta_task_start);
    }

    w.u8(state.penalty.active ? 1 : 0);
    if (state.penalty.active) {
        w.u64(state.penalty.importance.size());
        for (std::size_t i = 0; i < state.penalty.importance.size(); ++i) {
            w.matrix(state.penalty.importance[i]);
            w.f64(state.penalty.weights[i]);
            w.matrix(state.penalty.theta_ref[i]);
        }
    }

    w.u8(state.adam.active ? 1 : 0);
    if (state.adam.active) {
        w.u64(state.adam.step);
        w.u64(state.adam.m_b.size());
        for (std::size_t i = 0; i < state.adam.m_b.size(); ++i) {
            w.matrix(state.adam.m_b[i]);
            w.matrix(state.adam.v_b[i]);
            w.matrix(state.adam.m_a[i]);
            w.matrix(state.adam.v_a[i]);
        }
    }

    for (const std::uint64_t word : state.rng.state()) {
        w.u64(word);
    }

    w.u8(static_cast<std::uint8_t>(state.phase));
    w.u64(state.epoch);
    w.u64(state.step_in_epoch);
    w.u64(state.global_step);
    w.u8(state.has_nu_before ? 1 : 0);
    w.f64(state.nu_ce_before_mu);
    w.f64(state.importance_seconds);
    return w.take();
}

TrainState deserialize_checkpoint(const std::string& bytes) {
    ByteReader r(bytes);
    r.expect_magic();
    const std::uint32_t version = r.u32();
    check(version == kCheckpointVersion,
          "checkpoint: version " + std::to_string(version) + " unsupported (expected " +
              std::to_string(kCheckpointVersion) + ")");

    TrainState state;
    state.model_cfg.d_model = r.u64();
    state.model_cfg.n_blocks = r.u64();
    state.model_cfg.d_ff = r.u64();
    state.model_cfg.context_len = r.u64();
    const std::uint64_t vocab_size = r.u64();
    const std::uint64_t init_seed = r.u64();

    state.task_spec.generator = r.str();
    state.task_spec.seed = r.u64();
    state.task_spec.nu_train = r.u64();
    state.task_spec.nu_eval = r.u64();
    state.task_spec.mu_train = r.u64();
    state.task_spec.mu_eval = r.u64();
    state.task_spec.overlap = r.f64();

    TrainConfig& cfg = state.train_cfg;
    cfg.eta = r.f64();
    cfg.phi = r.f64();
    cfg.xi = r.f64();
    cfg.rank = r.u64();
    cfg.alpha = r.f64();
    cfg.scaling_mode = static_cast<ScalingMode>(r.u8());
    cfg.batch_size = r.u64();
    cfg.epochs_nu = r.u64();
    cfg.epochs_mu = r.u64();
    cfg.seed = r.u64();
    cfg.strategy = static_cast<Strategy>(r.u8());
    cfg.optimizer_mode = static_cast<OptimizerMode>(r.u8());
    validate(cfg);

    // Frozen weights come back from the recorded seed; digests verify them.
    state.model = build_model(state.model_cfg, vocab_size, cfg.rank, cfg.alpha,
                              effective_scaling_mode(cfg), init_seed);

    const std::uint64_t adapter_count = r.u64();
    auto adapters = state.model.adapters();
    check(adapter_count == adapters.size(),
          "checkpoint: adapter count disagrees with the architecture descriptor");
    for (LoraAdapter* a : adapters) {
        const std::string layer_id = r.str();
        check(layer_id == a->layer_id, "checkpoint: adapter order mismatch at '" + layer_id + "'");
        const std::uint64_t d_out = r.u64();
        const std::uint64_t d_in = r.u64();
        check(d_out == a->d_out() && d_in == a->d_in(),
              "checkpoint: adapter shape mismatch at '" + layer_id + "'");
        const std::uint64_t rank = r.u64();
        const double alpha = r.f64();
        const auto mode = static_cast<ScalingMode>(r.u8());
        check(rank == a->rank && alpha == a->alpha && mode == a->scaling_mode,
              "checkpoint: adapter scaling mismatch at '" + layer_id + "'");
        const std::uint64_t digest = r.u64();
        check(digest == fnv1a64(a->theta0.data(), a->theta0.size()),
              "checkpoint: theta0 digest mismatch at '" + layer_id +
                  "' (frozen weights differ from the recorded run)");
        a->B = r.matrix();
        a->A = r.matrix();
        check(a->B.rows() == d_out && a->B.cols() == rank && a->A.rows() == rank &&
                  a->A.cols() == d_in,
              "checkpoint: factor shape mismatch at '" + layer_id + "'");
    }

    const bool task_open = r.u8() != 0;
    const bool ever_consolidated = r.u8() != 0;
    const std::uint64_t layer_count = r.u64();
    std::vector<std::string> layer_ids;
    std::vector<LayerImportance> layers;
    for (std::uint64_t i = 0; i < layer_count; ++i) {
        layer_ids.push_back(r.str());
        LayerImportance layer;
        layer.omega = r.matrix();
        layer.omega_is_live = r.u8() != 0;
        layer.Omega = r.matrix();
        layer.theta_ref = r.matrix();
        layer.delta_total = r.matrix();
        layer.theta_task_start = r.matrix();
        layers.push_back(std::move(layer));
    }
    state.importance.restore(std::move(layer_ids), std::move(layers), task_open,
                             ever_consolidated);

    state.penalty.active = r.u8() != 0;
    if (state.penalty.active) {
        const std::uint64_t n = r.u64();
        for (std::uint64_t i = 0; i < n; ++i) {
            state.penalty.importance.push_back(r.matrix());
            state.penalty.weights.push_back(r.f64());
            state.penalty.theta_ref.push_back(r.matrix());
        }
    }

    state.adam.active = r.u8() != 0;
    if (state.adam.active) {
        state.adam.step = r.u64();
        const std::uint64_t n = r.u64();
        for (std::uint64_t i = 0; i < n; ++i) {
            state.adam.m_b.push_back(r.matrix());
            state.adam.v_b.push_back(r.matrix());
            state.adam.m_a.push_back(r.matrix());
            state.adam.v_a.push_back(r.matrix());
        }
    }

    std::array<std::uint64_t, 4> rng_state{};
    for (auto& word : rng_state) {
        word = r.u64();
    }
    state.rng.set_state(rng_state);

    state.phase = static_cast<Phase>(r.u8());
    state.epoch = r.u64();
    state.step_in_epoch = r.u64();
    state.global_step = r.u64();
    state.has_nu_before = r.u8() != 0;
    state.nu_ce_before_mu = r.f64();
    state.importance_seconds = r.f64();
    check(r.exhausted(), "checkpoint: trailing bytes after the final field");
    return state;
}

void save_checkpoint(const std::string& path, const TrainState& state) {
    const std::string bytes = serialize_checkpoint(state);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    check(out.good(), "save_checkpoint: cannot open " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    check(out.good(), "save_checkpoint: write failed for " + path);
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "load_checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

} // namespace silora
