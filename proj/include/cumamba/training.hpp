#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cumamba/config.hpp"
#include "cumamba/data.hpp"
#include "cumamba/module.hpp"
#include "cumamba/unet.hpp"

namespace cumamba {

/// Cosine annealing from lr_start at step 0 to lr_end at total_steps.
struct CosineSchedule {
    double lr_start = 5e-5;
    double lr_end = 1e-6;
    std::size_t total_steps = 1;

    /// Throws std::out_of_range unless 0 <= step <= total_steps.
    double lr(std::size_t step) const;
};

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

/// Raised when a trainable parameter has no gradient at update time.
class MissingGradientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Decoupled weight decay Adam over float parameters. Parameters flagged
/// decay = false (biases, norm gains, SSM state and skip terms) are not decayed.
class AdamW {
public:
    AdamW(std::vector<NamedParam<float>> params, AdamWOptions options);

    /// One update at learning rate `lr` from the accumulated gradients.
    void step(double lr);
    std::size_t step_count() const { return step_; }
    const AdamWOptions& options() const { return options_; }
    const std::vector<NamedParam<float>>& params() const { return params_; }

    /// First and second moments in parameter order.
    std::vector<Tensor<float>>& first_moments() { return m_; }
    std::vector<Tensor<float>>& second_moments() { return v_; }
    const std::vector<Tensor<float>>& first_moments() const { return m_; }
    const std::vector<Tensor<float>>& second_moments() const { return v_; }
    void set_step_count(std::size_t step) { step_ = step; }

private:
    std::vector<NamedParam<float>> params_;
    AdamWOptions options_;
    std::vector<Tensor<float>> m_, v_;
    std::size_t step_ = 0;
};

/// Euclidean norm over every accumulated gradient.
double global_grad_norm(const std::vector<NamedParam<float>>& params);

/// Scales gradients so their global norm is at most max_norm; returns the
/// norm before clipping.
double clip_grad_norm(const std::vector<NamedParam<float>>& params, double max_norm);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    RunConfig config;
    std::size_t step = 0;
    std::uint64_t rng_seed = 0;  // sampler state is (rng_seed, step)
    std::vector<std::pair<std::string, Tensor<float>>> params;
    std::size_t optimizer_step = 0;
    std::vector<std::pair<std::string, Tensor<float>>> moments;  // "m.<name>" and "v.<name>"
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Little-endian single-file format: magic, version, config text, step, seed,
/// then length-prefixed name/shape/data records for parameters and moments.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint parameters into `net`, matching by name and shape.
void load_parameters(Module<float>& net, const Checkpoint& ckpt);

struct LogRow {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;  // mean over the interval
    double psnr = 0.0;  // last batch, restored vs clean
    double ssim = 0.0;
};

/// Raised when the loss becomes non-finite.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EvalResult {
    double psnr_degraded = 0.0;
    double psnr_restored = 0.0;
    double ssim_degraded = 0.0;
    double ssim_restored = 0.0;
    std::size_t images = 0;
};

/// Mean metrics over samples whose size equals the network patch.
EvalResult evaluate(const CuMambaNet<float>& net, const std::vector<ImageSample>& samples);

/// Optimization state of one run. Fully deterministic in the config seed
/// when single-threaded.
class Trainer {
public:
    explicit Trainer(const RunConfig& config);
    /// Resumes from a checkpoint, including optimizer moments and sampler.
    explicit Trainer(const Checkpoint& ckpt);

    /// Runs optimizer steps until `step() == until` (at most config steps).
    /// Rows are appended every log_every steps and at the final step.
    void run(std::size_t until, const std::function<void(const LogRow&)>& on_log = {});
    /// One optimizer step on a caller-provided batch; returns the loss.
    double train_step(const Tensor<float>& degraded, const Tensor<float>& clean);

    std::size_t step() const { return step_; }
    const RunConfig& config() const { return config_; }
    CuMambaNet<float>& net() { return *net_; }
    const CuMambaNet<float>& net() const { return *net_; }
    const SyntheticDataset& dataset() const { return *data_; }
    const AdamW& optimizer() const { return *opt_; }
    Checkpoint checkpoint() const;

private:
    RunConfig config_;
    std::unique_ptr<CuMambaNet<float>> net_;
    std::unique_ptr<AdamW> opt_;
    std::unique_ptr<SyntheticDataset> data_;
    CosineSchedule schedule_;
    std::size_t step_ = 0;
    double interval_loss_ = 0.0;
    std::size_t interval_count_ = 0;
};

/// Writes the CSV header "step,lr,loss,psnr,ssim".
void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const LogRow& row);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LogRow> log;
    EvalResult eval;
};

/// Trains `config.train.steps` steps and evaluates on the held-out set.
/// Writes the log CSV and periodic checkpoints when `out_dir` is non-empty.
/// `on_log` sees every log row as it is produced.
TrainResult train_loop(const RunConfig& config, const std::string& out_dir = {},
                       const std::function<void(const LogRow&)>& on_log = {});

struct AblationRow {
    BlockKind kind = BlockKind::kResBlock;
    std::size_t params = 0;
    std::vector<double> psnr;  // per seed
    std::vector<double> ssim;
    double psnr_mean = 0.0, psnr_spread = 0.0;  // mean and sample standard deviation
    double ssim_mean = 0.0, ssim_spread = 0.0;
};

inline const std::vector<BlockKind> kAllBlockKinds{BlockKind::kResBlock, BlockKind::kSpatial, BlockKind::kChannel,
                                                   BlockKind::kCombined};

/// Trains each block kind from `base` for each seed with identical budget
/// and data, reporting held-out restored PSNR/SSIM.
std::vector<AblationRow> ablation_harness(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                          const std::function<void(const std::string&)>& progress = {},
                                          const std::vector<BlockKind>& kinds = kAllBlockKinds);

/// Plain-text table of an ablation.
std::string format_ablation(const std::vector<AblationRow>& rows);

}  // namespace cumamba
