#include "maskclip/engine.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <ostream>

#include <opencv2/imgproc.hpp>

#include "maskclip/archive.hpp"
#include "maskclip/config.hpp"
#include "maskclip/decoder.hpp"
#include "maskclip/errors.hpp"
#include "maskclip/image_ops.hpp"

namespace maskclip::engine {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
  if (!(learning_rate >= 0)) throw ConfigError("training.learning_rate must be >= 0");
  if (epochs < 1) throw ConfigError("training.epochs must be >= 1");
  if (max_steps < 0) throw ConfigError("training.max_steps must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must be in [0,1)");
  if (!(eps > 0)) throw ConfigError("training.eps must be > 0");
  if (grad_clip < 0) throw ConfigError("training.grad_clip must be >= 0");
}

namespace {

std::unique_ptr<torch::optim::Adam> make_optimizer(model::MaskClipImpl& m, const engine::TrainConfig& t) {
  auto params = m.tunable_list();
  return std::make_unique<torch::optim::Adam>(
      params, torch::optim::AdamOptions(t.learning_rate).betas({t.beta1, t.beta2}).eps(t.eps));
}

}  // namespace

ModelState init_state(const json& tree) {
  const auto rc = config::from_tree(tree);
  torch::manual_seed(rc.seed);
  ModelState s;
  s.config = config::merge(config::default_tree(), tree);
  s.seed = rc.seed;
  s.model = model::MaskClip(rc.model);
  s.model->load_encoders(rc.semantic_checkpoint, rc.text_checkpoint, rc.spatial_checkpoint);
  s.optimizer = make_optimizer(*s.model, rc.training);
  return s;
}

Batch make_batch(const std::vector<data::AugmentedSample>& samples) {
  std::vector<torch::Tensor> sem, sp, masks;
  std::vector<std::int64_t> labels;
  for (const auto& a : samples) {
    sem.push_back(image_ops::image_to_tensor(a.semantic_view));
    sp.push_back(image_ops::image_to_tensor(a.sample.image));
    masks.push_back(image_ops::mask_to_tensor(a.sample.mask));
    labels.push_back(a.sample.label == data::Label::fake ? 1 : 0);
  }
  Batch b;
  b.semantic = torch::stack(sem);
  b.spatial = torch::stack(sp);
  b.masks = torch::stack(masks);
  b.labels = torch::tensor(labels, torch::kInt64);
  return b;
}

TrainLog train(ModelState& state, const data::Manifest& manifest, const TrainOptions& options) {
  const auto rc = config::from_tree(state.config);
  const auto& tc = rc.training;
  const auto train_set = manifest.filter(data::Split::train);
  const auto n_fake = std::count_if(train_set.entries.begin(), train_set.entries.end(),
                                    [](const auto& e) { return e.label == data::Label::fake; });
  if (n_fake == 0 || n_fake == static_cast<long>(train_set.size()))
    throw ValidationError("training split needs at least one real and one fake sample");

  // Near-converged runs otherwise spend most of their time in subnormal arithmetic.
  at::globalContext().setFlushDenormal(true);
  state.model->train();
  const auto n = train_set.size();
  const auto steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  TrainLog log;
  auto save_checkpoint = [&](const std::string& name) {
    if (!options.checkpoint_dir) return;
    fs::create_directories(*options.checkpoint_dir);
    save_state(state, *options.checkpoint_dir / name);
  };

  bool stop = false;
  for (int epoch = 1; epoch <= tc.epochs && !stop; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    data::Rng shuffle_rng(state.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord er;
    er.epoch = epoch;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      if (tc.max_steps > 0 && state.step >= tc.max_steps) {
        stop = true;
        break;
      }
      std::vector<data::AugmentedSample> views;
      for (std::size_t i = b * tc.batch_size; i < std::min(n, (b + 1) * tc.batch_size); ++i) {
        const auto& entry = train_set.entries[order[i]];
        auto sample = data::load_sample(train_set, entry);
        if (tc.augment) {
          auto rng = data::sample_rng(state.seed + static_cast<std::uint64_t>(epoch) * 0x9E3779B97F4A7C15ULL, entry.id);
          views.push_back(data::augment(sample, rc.augmentation, rng));
        } else {
          views.push_back(data::prepare_views(sample, rc.augmentation.crop_size, rc.augmentation.clip_input_size));
        }
      }
      const Batch batch = make_batch(views);

      const auto out = state.model->forward(batch.semantic, batch.spatial);
      objective::LossTerms terms;
      try {
        terms = objective::combined_loss(out.m_fake, batch.masks.to(out.m_fake.dtype()), out.g, out.t_real, out.t_fake,
                                         batch.labels, rc.losses);
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(state.step) + ": " + e.what());
      }
      state.optimizer->zero_grad();
      terms.total.backward();
      if (tc.grad_clip > 0) torch::nn::utils::clip_grad_norm_(state.model->tunable_list(), tc.grad_clip);
      state.optimizer->step();
      ++state.step;

      StepRecord sr{state.step, epoch, terms.total.item<double>(), terms.ce.item<double>(), terms.bce.item<double>(),
                    terms.edg.item<double>()};
      log.steps.push_back(sr);
      er.total += sr.total;
      er.ce += sr.ce;
      er.bce += sr.bce;
      er.edg += sr.edg;
      ++er.steps;
      if (options.on_step && !options.on_step(sr)) {
        stop = true;
        break;
      }
    }
    if (er.steps > 0) {
      er.total /= er.steps;
      er.ce /= er.steps;
      er.bce /= er.steps;
      er.edg /= er.steps;
      log.epochs.push_back(er);
      if (options.log)
        *options.log << "epoch " << epoch << " steps " << er.steps << " loss " << er.total << " ce " << er.ce << " bce "
                     << er.bce << " edg " << er.edg << '\n';
      if (tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0)
        save_checkpoint("checkpoint_epoch_" + std::to_string(epoch) + ".safetensors");
    }
  }
  save_checkpoint("checkpoint_last.safetensors");
  return log;
}

std::vector<PredictionResult> predict_views(ModelState& state, const std::vector<data::AugmentedSample>& views,
                                            const std::vector<cv::Size>& out_sizes, double threshold) {
  if (views.size() != out_sizes.size()) throw ShapeError("predict_views: one output size per view required");
  torch::NoGradGuard guard;
  state.model->eval();
  const Batch batch = make_batch(views);
  const auto out = state.model->forward(batch.semantic, batch.spatial);
  const auto probs = torch::softmax(out.detection_logits.to(torch::kFloat64), 1);
  const double logit_threshold = std::log(threshold / (1.0 - threshold));

  std::vector<PredictionResult> results;
  for (std::size_t i = 0; i < views.size(); ++i) {
    PredictionResult r;
    r.p_fake = probs[static_cast<std::int64_t>(i)][1].item<double>();
    auto logits = out.m_fake[static_cast<std::int64_t>(i)].unsqueeze(0).unsqueeze(0);
    logits = decoder::resize_bilinear(logits, out_sizes[i].height, out_sizes[i].width);
    r.mask_logits = logits.squeeze(0).squeeze(0).contiguous();
    r.mask_binary = image_ops::tensor_to_mask((r.mask_logits > logit_threshold).to(torch::kFloat32));
    results.push_back(std::move(r));
  }
  return results;
}

PredictionResult predict(ModelState& state, const cv::Mat& image, double threshold) {
  if (image.empty()) throw IoError("cannot predict on an empty image");
  const auto& cfg = state.model->config();
  data::ImageSample s;
  s.image = image;
  s.mask = cv::Mat::zeros(image.rows, image.cols, CV_8UC1);
  auto views = data::prepare_views(s, cfg.spatial.input_size, cfg.semantic.input_size);
  return predict_views(state, {views}, {image.size()}, threshold).front();
}

void save_state(const ModelState& state, const fs::path& path) {
  archive::Archive a;
  for (const auto& [name, t] : state.model->state()) a.tensors[name] = t;

  // Adam keeps its per-parameter state keyed by the tensor impl pointer.
  const auto& opt_state = state.optimizer->state();
  for (const auto& [name, t] : state.model->tunable_parameters()) {
    auto it = opt_state.find(t.unsafeGetTensorImpl());
    if (it == opt_state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    a.tensors["optim." + name + ".exp_avg"] = s.exp_avg();
    a.tensors["optim." + name + ".exp_avg_sq"] = s.exp_avg_sq();
    a.tensors["optim." + name + ".step"] = torch::tensor({s.step()}, torch::kInt64);
  }
  a.metadata["format"] = "maskclip-checkpoint";
  a.metadata["format_version"] = std::to_string(kCheckpointVersion);
  archive::save(path, a);

  json meta{{"format", "maskclip-checkpoint"},
            {"format_version", kCheckpointVersion},
            {"step", state.step},
            {"seed", state.seed},
            {"config", state.config}};
  std::ofstream out(path.string() + ".json");
  if (!out) throw IoError("cannot write checkpoint metadata: " + path.string() + ".json");
  out << meta.dump(2) << '\n';
}

ModelState load_state(const fs::path& path) {
  if (!fs::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  const fs::path meta_path = path.string() + ".json";
  std::ifstream in(meta_path);
  if (!in) throw CheckpointError("checkpoint metadata not found: " + meta_path.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::parse_error& e) {
    throw CheckpointError("checkpoint metadata is corrupt: " + std::string(e.what()));
  }
  if (meta.value("format_version", -1) != kCheckpointVersion)
    throw CheckpointError("checkpoint version mismatch: expected " + std::to_string(kCheckpointVersion));

  const auto a = archive::load(path);
  auto version = a.metadata.find("format_version");
  if (version == a.metadata.end() || version->second != std::to_string(kCheckpointVersion))
    throw CheckpointError("checkpoint archive version mismatch: expected " + std::to_string(kCheckpointVersion));

  json tree = meta.at("config");
  // Pretrained archives were already folded into the checkpoint.
  for (const char* k : {"semantic", "text", "spatial"}) tree["model"][k]["checkpoint"] = "";
  ModelState s = init_state(tree);
  s.config = meta.at("config");
  s.step = meta.at("step").get<std::int64_t>();
  s.seed = meta.at("seed").get<std::uint64_t>();

  torch::NoGradGuard guard;
  for (auto& [name, t] : s.model->state()) {
    auto it = a.tensors.find(name);
    if (it == a.tensors.end()) throw CheckpointError("checkpoint is missing key: " + name);
    if (!it->second.sizes().equals(t.sizes())) throw CheckpointError("checkpoint shape conflict for key: " + name);
    t.copy_(it->second);
  }
  auto& opt_state = s.optimizer->state();
  for (const auto& [name, t] : s.model->tunable_parameters()) {
    auto m = a.tensors.find("optim." + name + ".exp_avg");
    if (m == a.tensors.end()) continue;
    auto st = std::make_unique<torch::optim::AdamParamState>();
    st->exp_avg(m->second.clone());
    st->exp_avg_sq(a.tensors.at("optim." + name + ".exp_avg_sq").clone());
    st->step(a.tensors.at("optim." + name + ".step").item<std::int64_t>());
    opt_state[t.unsafeGetTensorImpl()] = std::move(st);
  }
  return s;
}

}  // namespace maskclip::engine
