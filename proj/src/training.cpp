#include "cumamba/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "cumamba/objective.hpp"
#include "cumamba/simd/kernels.hpp"

namespace cumamba {

double CosineSchedule::lr(std::size_t step) const {
    if (total_steps == 0) throw std::out_of_range("cosine schedule needs total_steps > 0");
    if (step > total_steps) {
        throw std::out_of_range("step " + std::to_string(step) + " beyond schedule length " +
                                std::to_string(total_steps));
    }
    if (step == total_steps) return lr_end;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(std::numbers::pi * t));
}

AdamW::AdamW(std::vector<NamedParam<float>> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.shape());
        v_.emplace_back(p.tensor.shape());
    }
}

void AdamW::step(double lr) {
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) throw MissingGradientError("parameter '" + p.name + "' has no gradient");
    }
    ++step_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        simd::AdamCoeffs coeffs;
        coeffs.beta1 = static_cast<float>(b1);
        coeffs.beta2 = static_cast<float>(b2);
        coeffs.inv_bias1 = static_cast<float>(1.0 / c1);
        coeffs.inv_bias2 = static_cast<float>(1.0 / c2);
        coeffs.lr = static_cast<float>(lr);
        coeffs.eps = static_cast<float>(options_.eps);
        coeffs.decay = params_[k].decay ? static_cast<float>(1.0 - lr * options_.weight_decay) : 1.0f;
        Tensor<float> w = params_[k].tensor;
        simd::adamw(w.mutable_data().data(), m_[k].mutable_data().data(), v_[k].mutable_data().data(),
                    w.grad().data(), w.numel(), coeffs);
    }
}

double global_grad_norm(const std::vector<NamedParam<float>>& params) {
    double sq = 0.0;
    for (const auto& p : params)
        for (float g : p.tensor.grad()) sq += static_cast<double>(g) * g;
    return std::sqrt(sq);
}

double clip_grad_norm(const std::vector<NamedParam<float>>& params, double max_norm) {
    const double norm = global_grad_norm(params);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (const auto& p : params)
            for (float& g : p.tensor.impl()->grad) g = static_cast<float>(g * s);
    }
    return norm;
}

// Checkpoint encoding.

namespace {

constexpr char kMagic[8] = {'C', 'U', 'M', 'B', 'C', 'K', 'P', 'T'};

template <typename U>
void put(std::ostream& out, U v) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get(std::istream& in) {
    unsigned char b[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(b), sizeof(U))) throw CheckpointError("checkpoint truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    U v;
    std::memcpy(&v, b, sizeof(U));
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, std::uint64_t limit) {
    const auto n = get<std::uint64_t>(in);
    if (n > limit) throw CheckpointError("checkpoint string length " + std::to_string(n) + " is implausible");
    std::string s(n, '\0');
    if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError("checkpoint truncated");
    return s;
}

void put_tensor(std::ostream& out, const std::string& name, const Tensor<float>& t) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (float v : t.data()) put<float>(out, v);
}

std::pair<std::string, Tensor<float>> get_tensor(std::istream& in) {
    std::string name = get_string(in, 4096);
    const auto rank = get<std::uint32_t>(in);
    if (rank > 8) throw CheckpointError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& d : shape) {
        d = get<std::uint64_t>(in);
        count *= d;
        if (count > (std::uint64_t{1} << 34)) throw CheckpointError("tensor '" + name + "' is implausibly large");
    }
    std::vector<float> values(count);
    for (float& v : values) v = get<float>(in);
    return {std::move(name), Tensor<float>(shape, std::move(values))};
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, ckpt.version);
    put_string(out, to_text(ckpt.config));
    put<std::uint64_t>(out, ckpt.step);
    put<std::uint64_t>(out, ckpt.rng_seed);
    put<std::uint64_t>(out, ckpt.params.size());
    for (const auto& [name, t] : ckpt.params) put_tensor(out, name, t);
    put<std::uint64_t>(out, ckpt.optimizer_step);
    put<std::uint64_t>(out, ckpt.moments.size());
    for (const auto& [name, t] : ckpt.moments) put_tensor(out, name, t);
    if (!out) throw CheckpointError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
    char magic[sizeof kMagic];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw CheckpointError("not a checkpoint (bad magic bytes)");
    }
    Checkpoint c;
    c.version = get<std::uint32_t>(in);
    if (c.version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(c.version));
    }
    try {
        c.config = parse_config(get_string(in, 1 << 20));
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint config: ") + e.what());
    }
    c.step = get<std::uint64_t>(in);
    c.rng_seed = get<std::uint64_t>(in);
    const auto np = get<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < np; ++i) c.params.push_back(get_tensor(in));
    c.optimizer_step = get<std::uint64_t>(in);
    const auto nm = get<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < nm; ++i) c.moments.push_back(get_tensor(in));
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
    write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
    try {
        return read_checkpoint(in);
    } catch (const CheckpointError& e) {
        throw CheckpointError(path + ": " + e.what());
    }
}

void load_parameters(Module<float>& net, const Checkpoint& ckpt) {
    std::map<std::string, const Tensor<float>*> byname;
    for (const auto& [name, t] : ckpt.params) byname[name] = &t;
    for (auto& p : net.parameters()) {
        const auto it = byname.find(p.name);
        if (it == byname.end()) throw CheckpointError("checkpoint lacks parameter '" + p.name + "'");
        if (it->second->shape() != p.tensor.shape()) {
            throw CheckpointError("parameter '" + p.name + "' has shape " + shape_str(it->second->shape()) +
                                  " in the checkpoint but " + shape_str(p.tensor.shape()) + " in the model");
        }
        std::copy(it->second->data().begin(), it->second->data().end(), p.tensor.mutable_data().begin());
    }
}

// Evaluation and training.

namespace {

Tensor<float> clamp01(const Tensor<float>& x) {
    Tensor<float> out = x.detach().clone();
    for (float& v : out.mutable_data()) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

constexpr std::size_t kEvalBatch = 8;

}  // namespace

EvalResult evaluate(const CuMambaNet<float>& net, const std::vector<ImageSample>& samples) {
    EvalResult r;
    NoGradGuard guard;
    for (std::size_t start = 0; start < samples.size(); start += kEvalBatch) {
        const std::size_t end = std::min(samples.size(), start + kEvalBatch);
        std::vector<Image> inputs;
        for (std::size_t i = start; i < end; ++i) inputs.push_back(samples[i].degraded);
        const Tensor<float> out = clamp01(net.forward(stack_images(inputs)));
        for (std::size_t i = start; i < end; ++i) {
            const Image restored = batch_item(out, i - start);
            r.psnr_degraded += psnr(samples[i].degraded, samples[i].clean);
            r.psnr_restored += psnr(restored, samples[i].clean);
            r.ssim_degraded += ssim(samples[i].degraded, samples[i].clean);
            r.ssim_restored += ssim(restored, samples[i].clean);
        }
    }
    r.images = samples.size();
    if (r.images) {
        const double n = static_cast<double>(r.images);
        r.psnr_degraded /= n;
        r.psnr_restored /= n;
        r.ssim_degraded /= n;
        r.ssim_restored /= n;
    }
    return r;
}

namespace {

AdamWOptions adam_options(const TrainConfig& t) { return {t.beta1, t.beta2, t.adam_eps, t.weight_decay}; }

constexpr std::uint64_t kDataStream = 0xda7a;

}  // namespace

Trainer::Trainer(const RunConfig& config) : config_(config) {
    config_.validate();
    net_ = std::make_unique<CuMambaNet<float>>(config_.model, config_.seed);
    opt_ = std::make_unique<AdamW>(net_->parameters(), adam_options(config_.train));
    data_ = std::make_unique<SyntheticDataset>(config_.train, config_.model.patch_h, config_.model.patch_w,
                                               mix_seed(config_.seed, kDataStream));
    schedule_ = {config_.train.lr_start, config_.train.lr_end, std::max<std::size_t>(1, config_.train.steps)};
}

Trainer::Trainer(const Checkpoint& ckpt) : Trainer(ckpt.config) {
    if (ckpt.rng_seed != config_.seed) throw CheckpointError("checkpoint seed disagrees with its config");
    load_parameters(*net_, ckpt);
    std::map<std::string, const Tensor<float>*> byname;
    for (const auto& [name, t] : ckpt.moments) byname[name] = &t;
    const auto& params = opt_->params();
    for (std::size_t k = 0; k < params.size(); ++k) {
        for (auto [prefix, dst] : {std::pair{"m.", &opt_->first_moments()[k]}, std::pair{"v.", &opt_->second_moments()[k]}}) {
            const auto it = byname.find(prefix + params[k].name);
            if (it == byname.end()) throw CheckpointError("checkpoint lacks moment '" + std::string(prefix) + params[k].name + "'");
            if (it->second->shape() != dst->shape()) throw CheckpointError("moment shape mismatch for '" + params[k].name + "'");
            std::copy(it->second->data().begin(), it->second->data().end(), dst->mutable_data().begin());
        }
    }
    opt_->set_step_count(ckpt.optimizer_step);
    step_ = ckpt.step;
}

double Trainer::train_step(const Tensor<float>& degraded, const Tensor<float>& clean) {
    const double lr = schedule_.lr(std::min(step_, schedule_.total_steps));
    net_->zero_grad();
    const Tensor<float> out = net_->forward(degraded);
    const Tensor<float> loss = restoration_loss(out, clean, config_.loss);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
        loss.backward();
        std::ostringstream msg;
        msg << "non-finite loss " << value << " at step " << step_ << " (lr " << lr << ", grad norm "
            << global_grad_norm(opt_->params()) << ")";
        throw TrainingDiverged(msg.str());
    }
    loss.backward();
    if (config_.train.clip_norm > 0.0) clip_grad_norm(opt_->params(), config_.train.clip_norm);
    opt_->step(lr);
    ++step_;
    return value;
}

void Trainer::run(std::size_t until, const std::function<void(const LogRow&)>& on_log) {
    until = std::min(until, config_.train.steps);
    while (step_ < until) {
        const auto [degraded, clean] = data_->train_batch(step_, config_.train.batch);
        const double lr = schedule_.lr(step_);
        interval_loss_ += train_step(degraded, clean);
        ++interval_count_;
        if (step_ % config_.train.log_every == 0 || step_ == config_.train.steps) {
            LogRow row{step_, lr, interval_loss_ / static_cast<double>(interval_count_), 0.0, 0.0};
            {
                NoGradGuard guard;
                const Tensor<float> out = clamp01(net_->forward(degraded));
                row.psnr = psnr(out, clean);
                if (clean.size(1) >= kSsimWindow && clean.size(2) >= kSsimWindow) row.ssim = ssim(out, clean);
            }
            interval_loss_ = 0.0;
            interval_count_ = 0;
            if (on_log) on_log(row);
        }
    }
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.config = config_;
    c.step = step_;
    c.rng_seed = config_.seed;
    const auto& params = opt_->params();
    for (const auto& p : params) c.params.emplace_back(p.name, p.tensor.detach().clone());
    c.optimizer_step = opt_->step_count();
    for (std::size_t k = 0; k < params.size(); ++k) {
        c.moments.emplace_back("m." + params[k].name, opt_->first_moments()[k].clone());
        c.moments.emplace_back("v." + params[k].name, opt_->second_moments()[k].clone());
    }
    return c;
}

void write_log_header(std::ostream& out) { out << "step,lr,loss,psnr,ssim\n"; }

void write_log_row(std::ostream& out, const LogRow& row) {
    out << row.step << ',' << std::setprecision(9) << row.lr << ',' << row.loss << ',' << row.psnr << ','
        << row.ssim << '\n';
    out.flush();
}

TrainResult train_loop(const RunConfig& config, const std::string& out_dir,
                       const std::function<void(const LogRow&)>& on_log) {
    Trainer trainer(config);
    TrainResult result;
    std::ofstream log;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        log.open(std::filesystem::path(out_dir) / "log.csv");
        if (!log) throw std::runtime_error("cannot write log in '" + out_dir + "'");
        write_log_header(log);
    }
    const auto record = [&](const LogRow& row) {
        result.log.push_back(row);
        if (log.is_open()) write_log_row(log, row);
        if (on_log) on_log(row);
    };
    const std::size_t every = config.train.checkpoint_every;
    while (trainer.step() < config.train.steps) {
        const std::size_t next = every ? std::min(config.train.steps, (trainer.step() / every + 1) * every)
                                       : config.train.steps;
        trainer.run(next, record);
        if (!out_dir.empty() && every && trainer.step() % every == 0 && trainer.step() < config.train.steps) {
            save_checkpoint((std::filesystem::path(out_dir) / ("checkpoint_" + std::to_string(trainer.step()) + ".bin")).string(),
                            trainer.checkpoint());
        }
    }
    result.checkpoint = trainer.checkpoint();
    if (!out_dir.empty()) save_checkpoint((std::filesystem::path(out_dir) / "checkpoint.bin").string(), result.checkpoint);
    result.eval = evaluate(trainer.net(), trainer.dataset().test_set());
    return result;
}

namespace {

void mean_spread(const std::vector<double>& v, double& mean, double& spread) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    spread = 0.0;
    if (v.size() < 2) return;
    for (double x : v) spread += (x - mean) * (x - mean);
    spread = std::sqrt(spread / static_cast<double>(v.size() - 1));
}

}  // namespace

std::vector<AblationRow> ablation_harness(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                          const std::function<void(const std::string&)>& progress,
                                          const std::vector<BlockKind>& kinds) {
    if (seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
    std::vector<AblationRow> rows;
    for (BlockKind kind : kinds) {
        AblationRow row;
        row.kind = kind;
        RunConfig cfg = base;
        cfg.model.kind = kind;
        row.params = count_params_flops(cfg.model).params;
        for (std::uint64_t seed : seeds) {
            cfg.seed = seed;
            const TrainResult r = train_loop(cfg);
            row.psnr.push_back(r.eval.psnr_restored);
            row.ssim.push_back(r.eval.ssim_restored);
            if (progress) {
                std::ostringstream msg;
                msg << block_kind_name(kind) << " seed " << seed << ": psnr " << std::fixed << std::setprecision(3)
                    << r.eval.psnr_restored << " (input " << r.eval.psnr_degraded << "), ssim "
                    << r.eval.ssim_restored;
                progress(msg.str());
            }
        }
        mean_spread(row.psnr, row.psnr_mean, row.psnr_spread);
        mean_spread(row.ssim, row.ssim_mean, row.ssim_spread);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << std::left << std::setw(10) << "variant" << std::right << std::setw(12) << "params" << std::setw(10)
        << "seeds" << std::setw(18) << "psnr" << std::setw(18) << "ssim" << "\n";
    for (const auto& r : rows) {
        std::ostringstream p, s;
        p << std::fixed << std::setprecision(3) << r.psnr_mean << " +- " << r.psnr_spread;
        s << std::fixed << std::setprecision(4) << r.ssim_mean << " +- " << r.ssim_spread;
        out << std::left << std::setw(10) << block_kind_name(r.kind) << std::right << std::setw(12) << r.params
            << std::setw(10) << r.psnr.size() << std::setw(18) << p.str() << std::setw(18) << s.str() << "\n";
    }
    return out.str();
}

}  // namespace cumamba
