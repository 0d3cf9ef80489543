#include "evgs/commands.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evgs/errors.hpp"
#include "evgs/formats.hpp"
#include "evgs/metrics.hpp"

namespace evgs {

namespace {

using json = nlohmann::json;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string indexed(const char* stem, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d%s", stem, i, ext);
  return buf;
}

fs::path sequence_file(const RunConfig& c) { return c.paths.output / "sequence.json"; }

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw Error(ErrorKind::Config, what + " not found: " + p.string());
}

SceneSpec scene_for(const RunConfig& c) {
  SceneSpec scene = load_scene(c.paths.scene);
  scene.keyframe_stride = c.keyframe_stride;
  scene.validate();
  return scene;
}

std::vector<Timestamp> keyframe_times(const SimulatedSequence& seq) {
  std::vector<Timestamp> out;
  for (int k : seq.keyframes) out.push_back(seq.times[static_cast<std::size_t>(k)]);
  return out;
}

void write_key_values(const fs::path& path, const std::vector<std::pair<std::string, std::string>>& rows) {
  std::string text = "metric,value\n";
  for (const auto& [k, v] : rows) text += k + "," + v + "\n";
  write_text(path, text);
}

TiledFlowPredictor predictor_for(const RunConfig& c, const SimulatedSequence& seq) {
  require_file(c.predictor_path(), "pretrained predictor checkpoint");
  TiledFlowPredictor p = load_predictor(c.predictor_path());
  if (p.config().width != seq.events.width() || p.config().height != seq.events.height()) {
    throw Error(ErrorKind::Config, "predictor resolution does not match the event sensor");
  }
  return p;
}

fs::path model_path(const RunConfig& c) { return c.run_dir() / "model.ckpt"; }

SceneModel model_for(const RunConfig& c) {
  require_file(model_path(c), "trained model checkpoint");
  return load_model(model_path(c));
}

void write_render(const fs::path& dir, int index, const RenderOutput& r) {
  write_pnm(dir / indexed("frame", index, ".ppm"), r.color);
  write_pfm(dir / indexed("depth", index, ".pfm"), r.depth);
  write_pnm(dir / indexed("depth", index, ".pgm"), depth_preview(r.depth), 1.0);
}

}  // namespace

MetricsReport make_report(const HeldOutReport& h, const std::string& tag) {
  return {tag, h.views, h.view_psnr, h.view_ssim, h.psnr, h.ssim, h.flow_epe};
}

void write_metrics_report(const fs::path& path, const MetricsReport& r) {
  std::string text = "tag,view,psnr,ssim,flow_epe\n";
  for (std::size_t i = 0; i < r.views.size(); ++i) {
    text += r.tag + "," + std::to_string(r.views[i]) + "," + num(r.psnr[i]) + "," + num(r.ssim[i]) + ",\n";
  }
  text += r.tag + ",mean," + num(r.mean_psnr) + "," + num(r.mean_ssim) + "," + num(r.flow_epe) + "\n";
  write_text(path, text);
}

MetricsReport read_metrics_report(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "tag,view,psnr,ssim,flow_epe") {
    throw Error(ErrorKind::Format, "not a metrics report: " + path.string());
  }
  MetricsReport r;
  bool have_mean = false;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() < 4) throw Error(ErrorKind::Format, "short metrics row in " + path.string());
    r.tag = f[0];
    try {
      if (f[1] == "mean") {
        if (f.size() != 5) throw Error(ErrorKind::Format, "mean row needs flow_epe");
        r.mean_psnr = std::stod(f[2]);
        r.mean_ssim = std::stod(f[3]);
        r.flow_epe = std::stod(f[4]);
        have_mean = true;
      } else {
        r.views.push_back(std::stoi(f[1]));
        r.psnr.push_back(std::stod(f[2]));
        r.ssim.push_back(std::stod(f[3]));
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::Format, "bad number in " + path.string());
    }
  }
  if (!have_mean) throw Error(ErrorKind::Format, "metrics report without a mean row");
  return r;
}

SimulatedSequence load_sequence(const RunConfig& c) {
  require_file(sequence_file(c), "simulated sequence (run simulate first)");
  json j;
  try {
    j = json::parse(read_text(sequence_file(c)));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, "sequence.json: " + std::string(e.what()));
  }
  SimulatedSequence seq;
  seq.times = j.at("times").get<std::vector<Timestamp>>();
  seq.keyframes = j.at("keyframes").get<std::vector<int>>();
  for (const auto& f : j.at("frames")) seq.frames.push_back(read_pnm(c.paths.output / f.get<std::string>()));
  if (seq.frames.size() != seq.times.size()) throw Error(ErrorKind::Format, "sequence.json frame count mismatch");
  seq.events = read_events(c.events_path());
  return seq;
}

fs::path cmd_simulate(const RunConfig& c) {
  const SceneSpec scene = scene_for(c);
  const SimulatedSequence seq = simulate_sequence(scene, c.simulator);
  write_events(c.events_path(), seq.events);

  json frames = json::array();
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const std::string name = "frames/" + indexed("frame", static_cast<int>(i), ".ppm");
    write_pnm(c.paths.output / name, seq.frames[i]);
    frames.push_back(name);
  }
  for (int k : seq.keyframes) {
    write_pnm(c.paths.output / "keyframes" / indexed("key", k, ".ppm"), seq.frames[static_cast<std::size_t>(k)]);
  }
  const json meta = {{"width", scene.intr.width},
                     {"height", scene.intr.height},
                     {"times", seq.times},
                     {"keyframes", seq.keyframes},
                     {"frames", frames},
                     {"contrast_threshold", c.simulator.contrast_threshold}};
  write_text(sequence_file(c), meta.dump(1) + "\n");

  std::size_t positive = 0;
  for (const Event& e : seq.events.events()) positive += e.p > 0;
  const fs::path out = c.paths.output / "simulate_metrics.csv";
  write_key_values(out, {{"events", std::to_string(seq.events.size())},
                         {"positive", std::to_string(positive)},
                         {"negative", std::to_string(seq.events.size() - positive)},
                         {"dense_frames", std::to_string(seq.frames.size())},
                         {"keyframes", std::to_string(seq.keyframes.size())},
                         {"contrast_threshold", num(c.simulator.contrast_threshold)}});
  return out;
}

fs::path cmd_pretrain_flow(const RunConfig& c) {
  const SceneSpec scene = scene_for(c);
  PredictorConfig pc = c.predictor;
  pc.width = scene.intr.width;
  pc.height = scene.intr.height;
  TiledFlowPredictor predictor(pc, c.seed);

  std::vector<FlowSample> corpus = translation_corpus(pc.width, pc.height, c.pretrain_windows, {1.0, 0.0},
                                                      c.pretrain_speed, pc.bins, c.seed + 100);
  const auto vertical = translation_corpus(pc.width, pc.height, c.pretrain_windows, {0.0, 1.0}, c.pretrain_speed,
                                           pc.bins, c.seed + 200);
  corpus.insert(corpus.end(), vertical.begin(), vertical.end());
  const FlowTrainLog log = pretrain(predictor, corpus, c.pretrain);
  quantize_float32(predictor.network().parameters());
  save_predictor(c.predictor_path(), predictor);

  std::string text = "epoch,loss\n";
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) text += std::to_string(e) + "," + num(log.epoch_loss[e]) + "\n";
  const fs::path out = c.paths.output / "pretrain_loss.csv";
  write_text(out, text);
  return out;
}

fs::path cmd_finetune_flow(const RunConfig& c) {
  const SimulatedSequence seq = load_sequence(c);
  TiledFlowPredictor predictor = predictor_for(c, seq);
  const auto times = keyframe_times(seq);
  const std::vector<FlowSample> samples = window_samples(seq.events, times, predictor.config().bins);

  nn::LoraAdapter adapter = make_flow_adapter(predictor, c.lora_rank, c.lora_init, c.seed);
  const std::uint64_t base_before = predictor.base_checksum();
  const double loss_before = mean_flow_loss(predictor, nullptr, samples, c.finetune.loss);
  const std::vector<FlowField> before = predict_flows(predictor, nullptr, samples);
  const FlowTrainLog log = locm_finetune(predictor, adapter, samples, c.finetune);
  quantize_float32(adapter.parameters());
  const double loss_after = mean_flow_loss(predictor, &adapter, samples, c.finetune.loss);
  const std::vector<FlowField> after = predict_flows(predictor, &adapter, samples);
  save_adapter(c.adapter_path(), adapter, predictor);

  // Reload both checkpoints and confirm predictions are reproduced exactly.
  const TiledFlowPredictor base_again = load_predictor(c.predictor_path());
  const nn::LoraAdapter adapter_again = load_adapter(c.adapter_path(), base_again);
  bool identical = true;
  for (std::size_t w = 0; w < samples.size(); ++w) {
    const FlowField f = base_again.predict(samples[w].grid, &adapter_again);
    identical = identical && f.u == after[w].u && f.v == after[w].v;
  }

  const fs::path dir = c.paths.output / "flow";
  for (std::size_t w = 0; w < samples.size(); ++w) {
    double peak = 0.0;
    for (const FlowField* f : {&before[w], &after[w]}) {
      for (std::size_t i = 0; i < f->u.size(); ++i) peak = std::max(peak, std::hypot(f->u[i], f->v[i]));
    }
    write_pnm(dir / indexed("before", static_cast<int>(w), ".ppm"), flow_color_wheel(before[w], peak), 1.0);
    write_pnm(dir / indexed("after", static_cast<int>(w), ".ppm"), flow_color_wheel(after[w], peak), 1.0);
    write_flo(dir / indexed("after", static_cast<int>(w), ".flo"), after[w]);
  }

  std::string curve = "step,loss\n";
  for (std::size_t s = 0; s < log.step_loss.size(); ++s) curve += std::to_string(s) + "," + num(log.step_loss[s]) + "\n";
  write_text(c.paths.output / "finetune_loss.csv", curve);

  const fs::path out = c.paths.output / "finetune_metrics.csv";
  write_key_values(out, {{"windows", std::to_string(samples.size())},
                         {"loss_before", num(loss_before)},
                         {"loss_after", num(loss_after)},
                         {"skipped_steps", std::to_string(log.skipped)},
                         {"base_unchanged", base_before == predictor.base_checksum() ? "1" : "0"},
                         {"roundtrip_identical", identical ? "1" : "0"}});
  return out;
}

fs::path cmd_train(const RunConfig& c) {
  const SceneSpec scene = scene_for(c);
  const SimulatedSequence seq = load_sequence(c);
  const TiledFlowPredictor predictor = predictor_for(c, seq);
  require_file(c.adapter_path(), "flow adapter checkpoint");
  const nn::LoraAdapter adapter = load_adapter(c.adapter_path(), predictor);
  const auto samples = window_samples(seq.events, keyframe_times(seq), predictor.config().bins);
  const TrainingData data = make_training_data(scene, seq, predict_flows(predictor, &adapter, samples));

  const fs::path dir = c.run_dir();
  fs::create_directories(dir);
  SceneModel model = init_model(scene, c.deformation, c.posenet, c.seed);
  std::string log = "iteration,l_rgb,l_event,l_motion,gamma2,total,warmup,bound,heldout_psnr\n";
  try {
    Trainer trainer(model, data, c.train);
    trainer.run([&](const IterationLog& it) {
      const long n = it.iteration + 1;
      std::string psnr_cell;
      if (n % c.eval_every == 0 || n == c.train.iterations) {
        psnr_cell = num(evaluate_held_out(model, data.trajectory, scene, seq).psnr);
      }
      log += std::to_string(it.iteration) + "," + num(it.rgb) + "," + num(it.event) + "," + num(it.motion) + "," +
             num(it.gamma2) + "," + num(it.total) + "," + (it.warmup ? "1" : "0") + "," + std::to_string(it.bound) +
             "," + psnr_cell + "\n";
    });
  } catch (const Error& e) {
    write_text(dir / "train_log.csv", log);
    if (e.kind() == ErrorKind::TrainingFailure) save_model(dir / "model_failed.ckpt", model);
    throw;
  }
  write_text(dir / "train_log.csv", log);

  // What is evaluated here is exactly what the checkpoint holds.
  quantize_float32(model);
  save_model(model_path(c), model);
  const HeldOutReport held = evaluate_held_out(model, data.trajectory, scene, seq);
  for (int v : held.views) {
    write_render(dir / "renders", v,
                 render_model(model, data.trajectory, scene.intr, scene.background, seq.times[static_cast<std::size_t>(v)]));
  }
  const fs::path out = dir / "metrics.csv";
  write_metrics_report(out, make_report(held, ablation_tag(c.train)));
  return out;
}

fs::path cmd_render(const RunConfig& c) {
  const SceneSpec scene = scene_for(c);
  const SimulatedSequence seq = load_sequence(c);
  const SceneModel model = model_for(c);
  const TrainingData data = make_training_data(scene, seq, {});
  const fs::path dir = c.run_dir() / "render";
  std::string index = "frame,t_us,keyframe,psnr,ssim\n";
  std::vector<bool> is_key(seq.frames.size(), false);
  for (int k : seq.keyframes) is_key[static_cast<std::size_t>(k)] = true;
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const Timestamp t = seq.times[i];
    if (t < data.trajectory.start() || t > data.trajectory.end()) continue;
    const RenderOutput r = render_model(model, data.trajectory, scene.intr, scene.background, t);
    write_render(dir, static_cast<int>(i), r);
    index += std::to_string(i) + "," + std::to_string(t) + "," + (is_key[i] ? "1" : "0") + "," +
             num(psnr(r.color, seq.frames[i])) + "," + num(ssim(r.color, seq.frames[i])) + "\n";
  }
  const fs::path out = dir / "render_index.csv";
  write_text(out, index);
  return out;
}

fs::path cmd_eval(const RunConfig& c) {
  const SceneSpec scene = scene_for(c);
  const SimulatedSequence seq = load_sequence(c);
  const SceneModel model = model_for(c);
  const TrainingData data = make_training_data(scene, seq, {});
  const fs::path out = c.run_dir() / "eval_metrics.csv";
  write_metrics_report(out, make_report(evaluate_held_out(model, data.trajectory, scene, seq), ablation_tag(c.train)));
  return out;
}

namespace {

const std::vector<std::pair<std::string, Command>>& command_table() {
  static const std::vector<std::pair<std::string, Command>> table = {
      {"simulate", &cmd_simulate}, {"pretrain-flow", &cmd_pretrain_flow}, {"finetune-flow", &cmd_finetune_flow},
      {"train", &cmd_train},       {"render", &cmd_render},               {"eval", &cmd_eval},
  };
  return table;
}

}  // namespace

std::optional<Command> find_command(std::string_view name) {
  for (const auto& [n, fn] : command_table()) {
    if (n == name) return fn;
  }
  return std::nullopt;
}

std::vector<std::string> command_names() {
  std::vector<std::string> out;
  for (const auto& entry : command_table()) out.push_back(entry.first);
  return out;
}

}  // namespace evgs
