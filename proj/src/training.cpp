#include "fticir/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

#include "fticir/errors.hpp"

namespace fticir {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Every resolved setting, so a snapshot reproduces the run without the
// original file.
Config resolved_snapshot(const Config& config, const Backbone& backbone) {
    Config snap = config;
    backbone.config().to_config(snap);
    InversionConfig::from_config(config).to_config(snap);
    const TrainConfig t = TrainConfig::from_config(config);
    snap.set("train.lr", fmt_double(t.lr));
    snap.set("train.lr_decay_factor", fmt_double(t.lr_decay_factor));
    snap.set("train.lr_decay_epoch", std::to_string(t.lr_decay_epoch));
    snap.set("train.batch_size", std::to_string(t.batch_size));
    snap.set("train.epochs", std::to_string(t.epochs));
    snap.set("train.seed", std::to_string(t.seed));
    snap.set("train.max_steps", std::to_string(t.max_steps));
    snap.set("train.beta1", fmt_double(t.adam.beta1));
    snap.set("train.beta2", fmt_double(t.adam.beta2));
    snap.set("train.eps", fmt_double(t.adam.eps));
    snap.set("train.weight_decay", fmt_double(t.adam.weight_decay));
    snap.set("train.ablations", Ablations::parse(config.get_list("train.ablations")).to_string());
    snap.set("loss.tau", fmt_double(t.weights.tau));
    snap.set("loss.lambda_reg", fmt_double(t.weights.lambda_reg));
    snap.set("loss.intra_modal_negatives", t.weights.intra_modal_negatives ? "true" : "false");
    return snap;
}

ag::Tensor zero_scalar() { return ag::Tensor::constant(Eigen::MatrixXd::Zero(1, 1)); }

StepLosses to_values(const LossTensors& t) {
    StepLosses s;
    s.sim = t.sim.item();
    s.ortho = t.ortho.item();
    s.subj = t.subj.item();
    s.attr = t.attr.item();
    s.whole = t.whole.item();
    s.total = t.total.item();
    s.r = t.r;
    double sum = 0.0;
    for (std::size_t r : t.r) sum += static_cast<double>(r);
    s.mean_r = t.r.empty() ? 0.0 : sum / static_cast<double>(t.r.size());
    return s;
}

TrainSample make_sample(const Backbone& backbone, std::string id, const Image& image, const std::string& caption,
                        const Tagger& tagger) {
    TrainSample s;
    s.id = std::move(id);
    s.features = backbone.encode_image(image);
    s.split = split_caption(caption, tagger);
    try {
        s.t_base = backbone.encode_text_value(render_template(backbone, standardized_caption_text(s.split), {}));
    } catch (const Error& e) {
        fail(e.kind(), "caption of " + s.id + ": " + e.what());
    }
    return s;
}

}  // namespace

TrainConfig TrainConfig::from_config(const Config& cfg) {
    TrainConfig t;
    t.lr = cfg.get_double("train.lr", t.lr);
    t.lr_decay_factor = cfg.get_double("train.lr_decay_factor", t.lr_decay_factor);
    t.lr_decay_epoch = static_cast<int>(cfg.get_int("train.lr_decay_epoch", t.lr_decay_epoch));
    t.batch_size = static_cast<int>(cfg.get_int("train.batch_size", t.batch_size));
    t.epochs = static_cast<int>(cfg.get_int("train.epochs", t.epochs));
    t.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", static_cast<long long>(t.seed)));
    t.max_steps = static_cast<std::uint64_t>(cfg.get_int("train.max_steps", 0));
    t.adam.beta1 = cfg.get_double("train.beta1", t.adam.beta1);
    t.adam.beta2 = cfg.get_double("train.beta2", t.adam.beta2);
    t.adam.eps = cfg.get_double("train.eps", t.adam.eps);
    t.adam.weight_decay = cfg.get_double("train.weight_decay", t.adam.weight_decay);
    t.weights = LossWeights::from_config(cfg);
    t.out_dir = cfg.get_string("train.out_dir", t.out_dir);
    t.validate();
    return t;
}

void TrainConfig::validate() const {
    require(lr >= 0.0 && std::isfinite(lr), ErrorKind::config, "train.lr must be a finite value >= 0");
    require(lr_decay_factor > 0.0, ErrorKind::config, "train.lr_decay_factor must be > 0");
    require(batch_size >= 1, ErrorKind::config, "train.batch_size must be >= 1");
    require(epochs >= 1, ErrorKind::config, "train.epochs must be >= 1");
    require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0, ErrorKind::config,
            "train.beta1 and train.beta2 must lie in [0, 1)");
    require(adam.eps > 0.0, ErrorKind::config, "train.eps must be > 0");
    require(adam.weight_decay >= 0.0, ErrorKind::config, "train.weight_decay must be >= 0");
    weights.validate();
}

double lr_for_epoch(const TrainConfig& cfg, int epoch) {
    if (cfg.lr_decay_epoch > 0 && epoch >= cfg.lr_decay_epoch) return cfg.lr * cfg.lr_decay_factor;
    return cfg.lr;
}

AdamW::AdamW(nn::ParameterList params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& [name, tensor] : params_.items()) {
        m_.push_back(Eigen::MatrixXd::Zero(tensor.rows(), tensor.cols()));
        v_.push_back(Eigen::MatrixXd::Zero(tensor.rows(), tensor.cols()));
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& items = params_.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
        ag::Tensor& p = items[i].second;
        const Eigen::MatrixXd g = p.grad();
        Eigen::MatrixXd& value = p.mutable_value();
        value *= 1.0 - lr * cfg_.weight_decay;
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        const Eigen::MatrixXd m_hat = m_[i] / bc1;
        const Eigen::MatrixXd v_hat = v_[i] / bc2;
        value -= lr * (m_hat.array() / (v_hat.array().sqrt() + cfg_.eps)).matrix();
    }
}

void AdamW::load_state(std::uint64_t t, std::vector<Eigen::MatrixXd> m, std::vector<Eigen::MatrixXd> v) {
    require(m.size() == m_.size() && v.size() == v_.size(), ErrorKind::data,
            "optimizer state does not match the parameter list");
    for (std::size_t i = 0; i < m.size(); ++i) {
        require(m[i].rows() == m_[i].rows() && m[i].cols() == m_[i].cols() && v[i].rows() == v_[i].rows() &&
                    v[i].cols() == v_[i].cols(),
                ErrorKind::data, "optimizer moment shape mismatch for " + params_.items()[i].first);
    }
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

TrainingSet TrainingSet::build(const Backbone& backbone, const std::vector<ImageFile>& images,
                               const CaptionSource& captions, const Tagger& tagger, std::ostream* warnings) {
    std::vector<std::string> texts;
    texts.reserve(images.size());
    for (const ImageFile& f : images) texts.push_back(captions.caption(f.id));
    TrainingSet set;
    for (std::size_t i = 0; i < images.size(); ++i) {
        Image image;
        try {
            image = load_image(images[i].path);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::input && e.kind() != ErrorKind::io) throw;
            if (warnings) *warnings << "warning\tskipping " << images[i].path.string() << ": " << e.what() << '\n';
            continue;
        }
        set.samples.push_back(make_sample(backbone, images[i].id, image, texts[i], tagger));
    }
    return set;
}

TrainingSet TrainingSet::from_images(const Backbone& backbone, const std::vector<std::string>& ids,
                                     const std::vector<Image>& images, const CaptionSource& captions,
                                     const Tagger& tagger) {
    require(ids.size() == images.size(), ErrorKind::input, "ids and images differ in length");
    std::vector<std::string> texts;
    for (const std::string& id : ids) texts.push_back(captions.caption(id));
    TrainingSet set;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        set.samples.push_back(make_sample(backbone, ids[i], images[i], texts[i], tagger));
    }
    return set;
}

LossTensors batch_losses(const Model& model, const Backbone& backbone, std::span<const TrainSample* const> batch,
                         const LossWeights& weights, const nn::ForwardMode& mode) {
    require(!batch.empty(), ErrorKind::input, "empty training batch");
    const Ablations& abl = model.ablations();
    const TemplateOptions opts = model.templates();
    const auto B = static_cast<Eigen::Index>(batch.size());
    const Eigen::Index d = backbone.config().d_embed;

    LossTensors out;
    Eigen::MatrixXd globals(B, d);
    Eigen::MatrixXd bases(B, d);
    std::vector<ag::Tensor> t_q, t_s, t_a, t_sa, orthos;
    for (Eigen::Index i = 0; i < B; ++i) {
        const TrainSample& s = *batch[static_cast<std::size_t>(i)];
        globals.row(i) = s.features.global;
        bases.row(i) = s.t_base;
        const PseudoTokens pt = model.invert(s.features, mode);
        out.r.push_back(pt.r());
        const std::vector<ag::Tensor> rows = pt.attribute_rows();
        t_q.push_back(backbone.encode_text(model.image_sentence(backbone, pt)));
        if (!abl.no_ortho) orthos.push_back(orthogonal_loss(pt.topk_features));
        if (abl.use_subject_loss() || abl.use_attribute_loss() || abl.use_whole_loss()) {
            const TemplateBundle bundle = derivatives(backbone, s.split, pt.subject, rows, opts);
            if (abl.use_subject_loss()) t_s.push_back(backbone.encode_text(bundle.subject));
            if (abl.use_attribute_loss()) t_a.push_back(backbone.encode_text(bundle.attribute));
            if (abl.use_whole_loss()) t_sa.push_back(backbone.encode_text(bundle.whole));
        }
    }
    out.sim = contrastive_loss(ag::Tensor::constant(globals), ag::concat_rows(t_q), weights.tau,
                               weights.intra_modal_negatives);
    if (orthos.empty()) {
        out.ortho = zero_scalar();
    } else {
        out.ortho = ag::scale(ag::sum(ag::concat_rows(orthos)), 1.0 / static_cast<double>(B));
    }
    const ag::Tensor base = ag::Tensor::constant(bases);
    out.subj = t_s.empty() ? zero_scalar() : cosine_distance(base, ag::concat_rows(t_s));
    out.attr = t_a.empty() ? zero_scalar() : cosine_distance(base, ag::concat_rows(t_a));
    out.whole = t_sa.empty() ? zero_scalar() : cosine_distance(base, ag::concat_rows(t_sa));
    const ag::Tensor tri = ag::add(ag::add(out.subj, out.attr), out.whole);
    out.total = total_loss(out.sim, out.ortho, tri, weights);
    return out;
}

std::string metrics_header() { return "step\tL_sim\tL_ortho\tL_subj\tL_attr\tL_whole\ttotal\tmean_r"; }

std::string format_metrics_line(const StepLosses& s) {
    char buf[320];
    std::snprintf(buf, sizeof(buf), "%llu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.6g",
                  static_cast<unsigned long long>(s.step), s.sim, s.ortho, s.subj, s.attr, s.whole, s.total,
                  s.mean_r);
    return buf;
}

Trainer::Trainer(const Config& config, const Backbone& backbone, const TrainingSet& data)
    : backbone_(backbone),
      data_(data),
      train_(TrainConfig::from_config(config)),
      model_(resolved_snapshot(config, backbone)),
      optimizer_(model_.network().parameters(), train_.adam),
      rng_(train_.seed) {
    require(!data_.samples.empty(), ErrorKind::config, "training set is empty");
    model_.check_backbone(backbone_);
    r_histogram_.assign(static_cast<std::size_t>(model_.filter().k), 0);
}

Trainer::Trainer(const Checkpoint& ck, const Backbone& backbone, const TrainingSet& data)
    : backbone_(backbone),
      data_(data),
      train_(TrainConfig::from_config(ck.config)),
      model_(ck.config),
      optimizer_(model_.network().parameters(), train_.adam),
      rng_(train_.seed) {
    require(!data_.samples.empty(), ErrorKind::config, "training set is empty");
    model_.check_backbone(backbone_);
    require(ck.backbone_fingerprint == backbone_.weights_fingerprint(), ErrorKind::config,
            "checkpoint was trained against different backbone weights");
    model_.import_parameters(ck.params);
    optimizer_.load_state(ck.adam_step, ck.adam_m, ck.adam_v);
    rng_.set_state(ck.rng_state);
    epoch_ = ck.epoch;
    epoch_offset_ = ck.epoch_offset;
    order_ = ck.order;
    require(epoch_offset_ == 0 || order_.size() == data_.size(), ErrorKind::data,
            "checkpoint sample order does not match the training set size");
    r_histogram_ = ck.r_histogram;
    r_histogram_.resize(static_cast<std::size_t>(model_.filter().k), 0);
}

std::uint64_t Trainer::steps_per_epoch() const {
    const auto n = static_cast<std::uint64_t>(data_.size());
    const auto b = static_cast<std::uint64_t>(train_.batch_size);
    return (n + b - 1) / b;
}

std::uint64_t Trainer::total_steps() const {
    const std::uint64_t full = steps_per_epoch() * static_cast<std::uint64_t>(train_.epochs);
    return train_.max_steps > 0 ? std::min(full, train_.max_steps) : full;
}

StepLosses Trainer::train_step(std::span<const std::size_t> batch, double lr) {
    std::vector<const TrainSample*> samples;
    for (std::size_t i : batch) {
        require(i < data_.size(), ErrorKind::input, "batch index out of range");
        samples.push_back(&data_.samples[i]);
    }
    nn::ParameterList params = model_.network().parameters();
    params.zero_grad();
    const nn::ForwardMode mode{true, &rng_};
    const LossTensors losses = batch_losses(model_, backbone_, samples, train_.weights, mode);
    ag::backward(losses.total);
    optimizer_.step(lr);
    params.zero_grad();
    StepLosses s = to_values(losses);
    s.step = optimizer_.steps();
    for (std::size_t r : s.r) {
        if (r >= 1 && r <= r_histogram_.size()) ++r_histogram_[r - 1];
    }
    return s;
}

StepLosses Trainer::evaluate(std::span<const std::size_t> batch) const {
    std::vector<const TrainSample*> samples;
    for (std::size_t i : batch) {
        require(i < data_.size(), ErrorKind::input, "batch index out of range");
        samples.push_back(&data_.samples[i]);
    }
    ag::NoGradGuard guard;
    StepLosses s = to_values(batch_losses(model_, backbone_, samples, train_.weights, {}));
    s.step = optimizer_.steps();
    return s;
}

void Trainer::init_order_if_needed() {
    if (epoch_offset_ != 0) return;
    order_.resize(data_.size());
    std::iota(order_.begin(), order_.end(), std::uint64_t{0});
    rng_.shuffle(order_);
}

std::optional<StepLosses> Trainer::step() {
    if (finished()) return std::nullopt;
    init_order_if_needed();
    const std::uint64_t end = std::min<std::uint64_t>(epoch_offset_ + static_cast<std::uint64_t>(train_.batch_size),
                                                      order_.size());
    std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(epoch_offset_),
                                   order_.begin() + static_cast<std::ptrdiff_t>(end));
    const double lr = current_lr();
    StepLosses s = train_step(batch, lr);
    epoch_offset_ = end;
    if (epoch_offset_ >= order_.size()) {
        ++epoch_;
        epoch_offset_ = 0;
    }
    return s;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint ck;
    ck.config = model_.config();
    ck.step = optimizer_.steps();
    ck.epoch = epoch_;
    ck.epoch_offset = epoch_offset_;
    ck.order = order_;
    ck.rng_state = rng_.state();
    ck.backbone_fingerprint = backbone_.weights_fingerprint();
    ck.params = model_.export_parameters();
    ck.adam_step = optimizer_.steps();
    ck.adam_m = optimizer_.first_moments();
    ck.adam_v = optimizer_.second_moments();
    ck.r_histogram = r_histogram_;
    return ck;
}

std::filesystem::path Trainer::fit(const FitOptions& options) {
    const std::filesystem::path dir = options.out_dir.empty() ? std::filesystem::path(train_.out_dir) : options.out_dir;
    std::filesystem::create_directories(dir);
    {
        const std::string text = model_.config().serialize();
        write_file_atomic(dir / "config.cfg", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    }
    const std::filesystem::path log_path = dir / "metrics.tsv";
    const bool append = options.resume_log && std::filesystem::exists(log_path);
    std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) fail(ErrorKind::io, "cannot write " + log_path.string());
    if (!append) log << metrics_header() << '\n';

    auto write_histogram = [&] {
        std::string text = "r\tcount\n";
        for (std::size_t i = 0; i < r_histogram_.size(); ++i) {
            text += std::to_string(i + 1) + "\t" + std::to_string(r_histogram_[i]) + "\n";
        }
        write_file_atomic(dir / "r_histogram.tsv",
                          std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    };

    const std::filesystem::path last = dir / "last.bin";
    while (!finished()) {
        const std::uint32_t epoch_before = epoch_;
        const std::optional<StepLosses> s = step();
        log << format_metrics_line(*s) << '\n';
        log.flush();
        if (options.on_step) options.on_step(*s);
        if (epoch_ != epoch_before || finished()) {
            const Checkpoint ck = checkpoint();
            if (epoch_ != epoch_before) ck.save(dir / ("ckpt_epoch" + std::to_string(epoch_) + ".bin"));
            ck.save(last);
            write_histogram();
        }
    }
    if (!std::filesystem::exists(last)) {
        checkpoint().save(last);
        write_histogram();
    }
    return last;
}

}  // namespace fticir
