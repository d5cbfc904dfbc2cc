#include "maskclip/config.hpp"

#include <fstream>
#include <map>

#include "maskclip/errors.hpp"

namespace maskclip::config {

json default_tree() {
  const model::ModelConfig m = model::ModelConfig::maskclip_default();
  const objective::LossConfig l;
  const engine::TrainConfig t;
  const data::AugmentationConfig a;
  const EvalConfig e;
  const RobustnessConfig r;
  auto vision = [](const encoders::EncoderSpec& s) {
    return json{{"depth", s.depth},           {"width", s.width},           {"heads", s.heads},
                {"mlp_ratio", s.mlp_ratio},   {"patch_size", s.patch_size}, {"input_size", s.input_size},
                {"frozen", s.frozen},         {"checkpoint", ""}};
  };
  return json{
      {"seed", 0},
      {"output_dir", "runs/default"},
      {"model",
       {{"semantic", vision(m.semantic)},
        {"text",
         {{"depth", m.text.depth},
          {"width", m.text.width},
          {"heads", m.text.heads},
          {"mlp_ratio", m.text.mlp_ratio},
          {"prompt_length", m.text.context_length},
          {"embed_dim", m.text.embed_dim},
          {"frozen", m.text.frozen},
          {"checkpoint", ""}}},
        {"spatial", vision(m.spatial)},
        {"fusion", {{"count", 4}, {"semantic_layers", json::array()}, {"spatial_layers", json::array()}}},
        {"vsa", {{"heads", m.vsa_heads}, {"layers", json::array()}}},
        {"vca", {{"heads", m.vca_heads}}},
        {"tvca", {{"heads", m.tvca_heads}}},
        {"decoder", {{"scales", m.decoder.scales}, {"channels", m.decoder.channels}}},
        {"ablation",
         {{"prompt_tuning", m.ablation.prompt_tuning},
          {"vsa", m.ablation.vsa},
          {"vca", m.ablation.vca},
          {"tvca", m.ablation.tvca}}},
        {"double_precision", m.double_precision}}},
      {"losses",
       {{"w_ce", l.w_ce},
        {"w_bce", l.w_bce},
        {"w_edg", l.w_edg},
        {"temperature", l.temperature},
        {"edge_radius", l.edge_radius},
        {"edge_gain", l.edge_gain}}},
      {"training",
       {{"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"epochs", t.epochs},
        {"max_steps", t.max_steps},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"eps", t.eps},
        {"grad_clip", t.grad_clip},
        {"checkpoint_every", t.checkpoint_every},
        {"augment", t.augment}}},
      {"data",
       {{"train_manifest", ""},
        {"test_manifest", ""},
        {"augmentation",
         {{"blur_prob", a.blur_prob},
          {"jpeg_prob", a.jpeg_prob},
          {"scale_min", a.scale_min},
          {"scale_max", a.scale_max},
          {"hflip_prob", a.hflip_prob},
          {"vflip_prob", a.vflip_prob},
          {"blur_max_kernel", a.blur_max_kernel},
          {"jpeg_min_quality", a.jpeg_min_quality}}}}},
      {"evaluation", {{"threshold", e.threshold}, {"micro_average", e.micro_average}, {"split", e.split}}},
      {"robustness", {{"blur_levels", r.blur_levels}, {"jpeg_levels", r.jpeg_levels}, {"split", r.split}}},
  };
}

namespace {

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

}  // namespace

json merge(const json& base, const json& overlay, const std::string& path) {
  if (!overlay.is_object()) throw ConfigError("config section " + (path.empty() ? std::string("<root>") : path) + " must be an object");
  json out = base;
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string key_path = join(path, it.key());
    if (!base.contains(it.key())) throw UnknownKeyError("unknown config key: " + key_path);
    const json& def = base.at(it.key());
    if (def.is_object()) {
      out[it.key()] = merge(def, it.value(), key_path);
    } else {
      if (!same_kind(def, it.value()))
        throw ConfigError("config key " + key_path + " expects a " + std::string(def.type_name()) + ", got " +
                          std::string(it.value().type_name()));
      out[it.key()] = it.value();
    }
  }
  return out;
}

void set_key(json& tree, const std::string& dotted_key, const std::string& value_text) {
  json value;
  try {
    value = json::parse(value_text);
  } catch (const json::parse_error&) {
    value = value_text;
  }
  json overlay = value;
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_key.find('.', start);
    parts.push_back(dotted_key.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) overlay = json{{*it, overlay}};
  // A string default given an unquoted number/bool (e.g. output_dir=123) keeps its string form.
  const json* def = &tree;
  for (const auto& p : parts) {
    if (!def->is_object() || !def->contains(p)) break;
    def = &def->at(p);
  }
  if (def->is_string() && !value.is_string()) return set_key(tree, dotted_key, "\"" + value_text + "\"");
  tree = merge(tree, overlay);
}

json read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  try {
    return json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
}

json resolve(const std::optional<std::filesystem::path>& file, const Overrides& overrides) {
  json tree = default_tree();
  if (file) tree = merge(tree, read_file(*file));

  std::map<std::string, json> seen;
  auto record = [&](const std::string& key, const json& value) {
    auto [it, inserted] = seen.emplace(key, value);
    if (!inserted && it->second != value)
      throw ConflictError("conflicting overrides for " + key + ": " + it->second.dump() + " vs " + value.dump());
  };
  for (const auto& a : overrides.assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + a);
    const std::string key = a.substr(0, eq);
    set_key(tree, key, a.substr(eq + 1));
    const json* v = &tree;
    for (std::size_t start = 0;;) {
      const auto dot = key.find('.', start);
      v = &v->at(key.substr(start, dot - start));
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    record(key, *v);
  }
  if (overrides.seed) {
    record("seed", json(*overrides.seed));
    tree["seed"] = *overrides.seed;
  }
  if (overrides.output_dir) {
    record("output_dir", json(*overrides.output_dir));
    tree["output_dir"] = *overrides.output_dir;
  }
  return tree;
}

namespace {

encoders::EncoderSpec vision_spec(const json& j, encoders::EncoderSpec base) {
  base.depth = j.at("depth").get<int>();
  base.width = j.at("width").get<int>();
  base.heads = j.at("heads").get<int>();
  base.mlp_ratio = j.at("mlp_ratio").get<int>();
  base.patch_size = j.at("patch_size").get<int>();
  base.input_size = j.at("input_size").get<int>();
  base.frozen = j.at("frozen").get<bool>();
  return base;
}

}  // namespace

RunConfig from_tree(const json& tree_in) {
  // Fill any keys a caller left out, and reject unknown ones.
  const json tree = merge(default_tree(), tree_in);
  RunConfig rc;
  try {
    rc.seed = tree.at("seed").get<std::uint64_t>();
    rc.output_dir = tree.at("output_dir").get<std::string>();

    const json& m = tree.at("model");
    rc.model.semantic = vision_spec(m.at("semantic"), encoders::EncoderSpec::clip_vit_l14_vision());
    rc.model.spatial = vision_spec(m.at("spatial"), encoders::EncoderSpec::mae_vit_b32());
    const json& t = m.at("text");
    rc.model.text = encoders::EncoderSpec::clip_vit_l14_text();
    rc.model.text.depth = t.at("depth").get<int>();
    rc.model.text.width = t.at("width").get<int>();
    rc.model.text.heads = t.at("heads").get<int>();
    rc.model.text.mlp_ratio = t.at("mlp_ratio").get<int>();
    rc.model.text.context_length = t.at("prompt_length").get<int>();
    rc.model.text.embed_dim = t.at("embed_dim").get<int>();
    rc.model.text.frozen = t.at("frozen").get<bool>();
    rc.semantic_checkpoint = m.at("semantic").at("checkpoint").get<std::string>();
    rc.text_checkpoint = t.at("checkpoint").get<std::string>();
    rc.spatial_checkpoint = m.at("spatial").at("checkpoint").get<std::string>();

    const json& fusion = m.at("fusion");
    const auto sem_layers = fusion.at("semantic_layers").get<std::vector<int>>();
    const auto sp_layers = fusion.at("spatial_layers").get<std::vector<int>>();
    if (sem_layers.size() != sp_layers.size())
      throw ConfigError("model.fusion.semantic_layers and spatial_layers must have equal length");
    if (sem_layers.empty()) {
      rc.model.plan = spm::FusionPlan::even(rc.model.semantic.depth, rc.model.spatial.depth, fusion.at("count").get<int>());
    } else {
      rc.model.plan.pairs.clear();
      for (std::size_t i = 0; i < sem_layers.size(); ++i) rc.model.plan.pairs.emplace_back(sem_layers[i] - 1, sp_layers[i] - 1);
    }
    rc.model.vsa_layers.clear();
    for (int l : m.at("vsa").at("layers").get<std::vector<int>>()) rc.model.vsa_layers.push_back(l - 1);
    rc.model.vsa_heads = m.at("vsa").at("heads").get<int>();
    rc.model.vca_heads = m.at("vca").at("heads").get<int>();
    rc.model.tvca_heads = m.at("tvca").at("heads").get<int>();
    rc.model.decoder.scales = m.at("decoder").at("scales").get<std::vector<double>>();
    rc.model.decoder.channels = m.at("decoder").at("channels").get<int>();
    const json& ab = m.at("ablation");
    rc.model.ablation.prompt_tuning = ab.at("prompt_tuning").get<bool>();
    rc.model.ablation.vsa = ab.at("vsa").get<bool>();
    rc.model.ablation.vca = ab.at("vca").get<bool>();
    rc.model.ablation.tvca = ab.at("tvca").get<bool>();
    rc.model.double_precision = m.at("double_precision").get<bool>();

    const json& l = tree.at("losses");
    rc.losses.w_ce = l.at("w_ce").get<double>();
    rc.losses.w_bce = l.at("w_bce").get<double>();
    rc.losses.w_edg = l.at("w_edg").get<double>();
    rc.losses.temperature = l.at("temperature").get<double>();
    rc.losses.edge_radius = l.at("edge_radius").get<int>();
    rc.losses.edge_gain = l.at("edge_gain").get<double>();
    rc.model.temperature = rc.losses.temperature;

    const json& tr = tree.at("training");
    rc.training.batch_size = tr.at("batch_size").get<int>();
    rc.training.learning_rate = tr.at("learning_rate").get<double>();
    rc.training.epochs = tr.at("epochs").get<int>();
    rc.training.max_steps = tr.at("max_steps").get<int>();
    rc.training.beta1 = tr.at("beta1").get<double>();
    rc.training.beta2 = tr.at("beta2").get<double>();
    rc.training.eps = tr.at("eps").get<double>();
    rc.training.grad_clip = tr.at("grad_clip").get<double>();
    rc.training.checkpoint_every = tr.at("checkpoint_every").get<int>();
    rc.training.augment = tr.at("augment").get<bool>();
    rc.training.seed = rc.seed;

    const json& d = tree.at("data");
    rc.train_manifest = d.at("train_manifest").get<std::string>();
    rc.test_manifest = d.at("test_manifest").get<std::string>();
    const json& a = d.at("augmentation");
    rc.augmentation.blur_prob = a.at("blur_prob").get<double>();
    rc.augmentation.jpeg_prob = a.at("jpeg_prob").get<double>();
    rc.augmentation.scale_min = a.at("scale_min").get<double>();
    rc.augmentation.scale_max = a.at("scale_max").get<double>();
    rc.augmentation.hflip_prob = a.at("hflip_prob").get<double>();
    rc.augmentation.vflip_prob = a.at("vflip_prob").get<double>();
    rc.augmentation.blur_max_kernel = a.at("blur_max_kernel").get<int>();
    rc.augmentation.jpeg_min_quality = a.at("jpeg_min_quality").get<int>();
    rc.augmentation.crop_size = rc.model.spatial.input_size;
    rc.augmentation.clip_input_size = rc.model.semantic.input_size;

    const json& e = tree.at("evaluation");
    rc.evaluation.threshold = e.at("threshold").get<double>();
    rc.evaluation.micro_average = e.at("micro_average").get<bool>();
    rc.evaluation.split = e.at("split").get<std::string>();

    const json& r = tree.at("robustness");
    rc.robustness.blur_levels = r.at("blur_levels").get<std::vector<int>>();
    rc.robustness.jpeg_levels = r.at("jpeg_levels").get<std::vector<int>>();
    rc.robustness.split = r.at("split").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }

  rc.model.validate();
  rc.losses.validate();
  rc.training.validate();
  rc.augmentation.validate(rc.model.spatial.patch_size, rc.model.semantic.patch_size);
  for (const auto* s : {&rc.evaluation.split, &rc.robustness.split})
    if (*s != "train" && *s != "test" && *s != "all") throw ConfigError("split must be train, test or all");
  if (!(rc.evaluation.threshold > 0 && rc.evaluation.threshold < 1)) throw ConfigError("evaluation.threshold must be in (0,1)");
  return rc;
}

}  // namespace maskclip::config
