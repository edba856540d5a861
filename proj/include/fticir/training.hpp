#pragma once

// Optimisation of the inversion network over unlabeled images with captions.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fticir/backbone.hpp"
#include "fticir/config.hpp"
#include "fticir/losses.hpp"
#include "fticir/model.hpp"
#include "fticir/rng.hpp"
#include "fticir/textgen.hpp"

namespace fticir {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct TrainConfig {
    double lr = 4e-5;
    double lr_decay_factor = 0.1;
    int lr_decay_epoch = 10;  // 1-based epoch that first uses the decayed rate; <= 0 disables
    int batch_size = 256;
    int epochs = 20;
    std::uint64_t seed = 0;
    std::uint64_t max_steps = 0;  // 0: no cap
    AdamWConfig adam;
    LossWeights weights;
    std::string out_dir = "runs/train";

    static TrainConfig from_config(const Config& cfg);
    void validate() const;
};

// Learning rate used throughout 1-based epoch `epoch`.
double lr_for_epoch(const TrainConfig& cfg, int epoch);

// Decoupled weight decay: p <- p (1 - lr wd), then the bias-corrected
// adaptive-moment update.
class AdamW {
public:
    AdamW(nn::ParameterList params, AdamWConfig cfg);

    void step(double lr);

    std::uint64_t steps() const { return t_; }
    const std::vector<Eigen::MatrixXd>& first_moments() const { return m_; }
    const std::vector<Eigen::MatrixXd>& second_moments() const { return v_; }
    void load_state(std::uint64_t t, std::vector<Eigen::MatrixXd> m, std::vector<Eigen::MatrixXd> v);

private:
    nn::ParameterList params_;
    AdamWConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<Eigen::MatrixXd> m_;
    std::vector<Eigen::MatrixXd> v_;
};

struct TrainSample {
    std::string id;
    ImageFeatures features;
    CaptionSplit split;
    Eigen::RowVectorXd t_base;  // embedding of the standardized caption
};

struct TrainingSet {
    std::vector<TrainSample> samples;

    // Resolves every caption before encoding anything; a missing caption is
    // a lookup error.
    static TrainingSet build(const Backbone& backbone, const std::vector<ImageFile>& images,
                             const CaptionSource& captions, const Tagger& tagger, std::ostream* warnings = nullptr);
    static TrainingSet from_images(const Backbone& backbone, const std::vector<std::string>& ids,
                                   const std::vector<Image>& images, const CaptionSource& captions,
                                   const Tagger& tagger);

    std::size_t size() const { return samples.size(); }
};

struct LossTensors {
    ag::Tensor sim, ortho, subj, attr, whole, total;
    std::vector<std::size_t> r;
};

LossTensors batch_losses(const Model& model, const Backbone& backbone, std::span<const TrainSample* const> batch,
                         const LossWeights& weights, const nn::ForwardMode& mode);

struct StepLosses {
    std::uint64_t step = 0;  // 1-based index of the update that produced these values
    double sim = 0, ortho = 0, subj = 0, attr = 0, whole = 0, total = 0, mean_r = 0;
    std::vector<std::size_t> r;
};

// `step L_sim L_ortho L_subj L_attr L_whole total mean_r` line, no newline.
std::string format_metrics_line(const StepLosses& s);
std::string metrics_header();

class Trainer {
public:
    // Fresh run. `config` is the full configuration; the backbone's actual
    // dims are folded into the snapshot.
    Trainer(const Config& config, const Backbone& backbone, const TrainingSet& data);
    // Continues from a checkpoint of the same configuration.
    Trainer(const Checkpoint& checkpoint, const Backbone& backbone, const TrainingSet& data);

    const TrainConfig& train_config() const { return train_; }
    const Config& config() const { return model_.config(); }
    const Model& model() const { return model_; }
    Model& model() { return model_; }

    std::uint64_t steps_per_epoch() const;
    std::uint64_t total_steps() const;
    std::uint64_t steps_taken() const { return optimizer_.steps(); }
    bool finished() const { return steps_taken() >= total_steps(); }
    // 1-based epoch of the next step.
    int current_epoch() const { return static_cast<int>(epoch_) + 1; }
    double current_lr() const { return lr_for_epoch(train_, current_epoch()); }

    // One update on explicit sample indices at learning rate `lr`.
    StepLosses train_step(std::span<const std::size_t> batch, double lr);
    // Next scheduled batch; nullopt once finished.
    std::optional<StepLosses> step();
    // Losses without dropout or parameter change.
    StepLosses evaluate(std::span<const std::size_t> batch) const;

    Checkpoint checkpoint() const;
    const std::vector<std::uint64_t>& r_histogram() const { return r_histogram_; }

    struct FitOptions {
        std::filesystem::path out_dir;  // empty: train.out_dir
        bool resume_log = false;        // append to an existing metrics log
        std::function<void(const StepLosses&)> on_step;
    };
    // Runs to completion writing metrics.tsv, r_histogram.tsv, config.cfg,
    // ckpt_epoch{E}.bin after each epoch and last.bin. Returns last.bin path.
    std::filesystem::path fit(const FitOptions& options);

private:
    void init_order_if_needed();

    const Backbone& backbone_;
    const TrainingSet& data_;
    TrainConfig train_;
    Model model_;
    AdamW optimizer_;
    Rng rng_;
    std::uint32_t epoch_ = 0;
    std::uint64_t epoch_offset_ = 0;
    std::vector<std::uint64_t> order_;
    std::vector<std::uint64_t> r_histogram_;
};

}  // namespace fticir
