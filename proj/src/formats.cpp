#include "evgs/formats.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "evgs/errors.hpp"

namespace evgs {

namespace {

using json = nlohmann::json;

constexpr std::array<char, 8> kEventMagic{'E', 'V', 'G', 'S', 'E', 'V', '0', '1'};
constexpr std::array<char, 8> kCheckpointMagic{'E', 'V', 'G', 'S', 'C', 'K', '0', '1'};

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  return in;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

template <typename T>
void put(std::string& buf, T v) {
  using U = std::make_unsigned_t<T>;
  const U u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

template <typename T>
T get(const unsigned char* p) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return static_cast<T>(u);
}

void put_f32(std::string& buf, double v) { put(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
double get_f32(const unsigned char* p) { return std::bit_cast<float>(get<std::uint32_t>(p)); }

std::string read_all(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const fs::path& path;

  const unsigned char* take(std::size_t n) {
    if (pos + n > buf.size()) throw Error(ErrorKind::Format, "truncated file: " + path.string());
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
    pos += n;
    return p;
  }
  template <typename T>
  T read() {
    return get<T>(take(sizeof(T)));
  }
};

void write_events_csv(const fs::path& path, const EventStream& stream) {
  std::ofstream out = open_out(path);
  out << "# width=" << stream.width() << " height=" << stream.height() << " t_begin=" << stream.range().t_start
      << " t_end=" << stream.range().t_end << "\n";
  out << "t_us,x,y,p\n";
  for (const Event& e : stream.events()) out << e.t << ',' << e.x << ',' << e.y << ',' << int(e.p) << '\n';
  finish(out, path);
}

EventStream read_events_csv(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  int width = 0, height = 0;
  TimeWindow range;
  if (!std::getline(in, line) ||
      std::sscanf(line.c_str(), "# width=%d height=%d t_begin=%ld t_end=%ld", &width, &height, &range.t_start,
                  &range.t_end) != 4) {
    throw Error(ErrorKind::Format, "missing event CSV preamble in " + path.string());
  }
  if (!std::getline(in, line) || line != "t_us,x,y,p") throw Error(ErrorKind::Format, "bad event CSV header");
  std::vector<Event> events;
  std::size_t row = 2;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    long t = 0;
    int x = 0, y = 0, p = 0;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%ld,%d,%d,%d%c", &t, &x, &y, &p, &tail) != 4) {
      throw Error(ErrorKind::Format, path.string() + ": bad event row " + std::to_string(row));
    }
    events.push_back({x, y, t, static_cast<std::int8_t>(p)});
  }
  return EventStream(std::move(events), width, height, range);
}

void write_events_binary(const fs::path& path, const EventStream& stream) {
  std::string buf(kEventMagic.begin(), kEventMagic.end());
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(stream.width()));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(stream.height()));
  put<std::int64_t>(buf, stream.range().t_start);
  put<std::int64_t>(buf, stream.range().t_end);
  put<std::uint64_t>(buf, stream.size());
  buf.reserve(buf.size() + 13 * stream.size());
  for (const Event& e : stream.events()) {
    if (e.t < 0 || e.x > 0xffff || e.y > 0xffff) throw Error(ErrorKind::Format, "event does not fit packed layout");
    put<std::uint64_t>(buf, static_cast<std::uint64_t>(e.t));
    put<std::uint16_t>(buf, static_cast<std::uint16_t>(e.x));
    put<std::uint16_t>(buf, static_cast<std::uint16_t>(e.y));
    put<std::int8_t>(buf, e.p);
  }
  std::ofstream out = open_out(path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  finish(out, path);
}

EventStream read_events_binary(const fs::path& path) {
  const std::string buf = read_all(path);
  Reader r{buf, 0, path};
  if (std::memcmp(r.take(8), kEventMagic.data(), 8) != 0) throw Error(ErrorKind::Format, "not an event file");
  const int width = static_cast<int>(r.read<std::uint32_t>());
  const int height = static_cast<int>(r.read<std::uint32_t>());
  TimeWindow range;
  range.t_start = r.read<std::int64_t>();
  range.t_end = r.read<std::int64_t>();
  const std::uint64_t n = r.read<std::uint64_t>();
  if (n > (buf.size() - r.pos) / 13) throw Error(ErrorKind::Format, "truncated event file");
  std::vector<Event> events(n);
  for (Event& e : events) {
    e.t = static_cast<Timestamp>(r.read<std::uint64_t>());
    e.x = r.read<std::uint16_t>();
    e.y = r.read<std::uint16_t>();
    e.p = r.read<std::int8_t>();
  }
  if (r.pos != buf.size()) throw Error(ErrorKind::Format, "trailing bytes in event file");
  return EventStream(std::move(events), width, height, range);
}

json shape_list(std::span<const nn::Param* const> tensors) {
  json shapes = json::array();
  for (const nn::Param* p : tensors) shapes.push_back({p->value.rows(), p->value.cols()});
  return shapes;
}

std::vector<const nn::Param*> const_view(const std::vector<nn::Param*>& ps) { return {ps.begin(), ps.end()}; }

json mlp_spec_json(const nn::MlpSpec& s) {
  return {{"input", s.input},
          {"hidden", s.hidden},
          {"output", s.output},
          {"hidden_activation", static_cast<int>(s.hidden_activation)},
          {"output_activation", static_cast<int>(s.output_activation)},
          {"skip_layer", s.skip_layer}};
}

void check_spec(const json& stored, const nn::MlpSpec& expected, const std::string& what) {
  if (stored != mlp_spec_json(expected)) throw Error(ErrorKind::Format, what + " network layout does not match");
}

std::string hex64(std::uint64_t v) {
  char s[17];
  std::snprintf(s, sizeof s, "%016llx", static_cast<unsigned long long>(v));
  return s;
}

// Canonical Gaussians viewed as five N-row tensors.
struct GaussianTensors {
  nn::Param mu, log_scale, rotation, opacity, color;

  explicit GaussianTensors(std::size_t n)
      : mu(static_cast<Eigen::Index>(n), 3), log_scale(static_cast<Eigen::Index>(n), 3),
        rotation(static_cast<Eigen::Index>(n), 4), opacity(static_cast<Eigen::Index>(n), 1),
        color(static_cast<Eigen::Index>(n), 3) {}
  explicit GaussianTensors(std::span<const Gaussian> gs) : GaussianTensors(gs.size()) {
    for (std::size_t i = 0; i < gs.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      mu.value.row(r) = gs[i].mu.transpose();
      log_scale.value.row(r) = gs[i].log_scale.transpose();
      rotation.value.row(r) = gs[i].rotation.transpose();
      opacity.value(r, 0) = gs[i].opacity_logit;
      color.value.row(r) = gs[i].color.transpose();
    }
  }
  void store(std::vector<Gaussian>& gs) const {
    for (std::size_t i = 0; i < gs.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      gs[i].mu = mu.value.row(r).transpose();
      gs[i].log_scale = log_scale.value.row(r).transpose();
      gs[i].rotation = rotation.value.row(r).transpose();
      gs[i].opacity_logit = opacity.value(r, 0);
      gs[i].color = color.value.row(r).transpose();
    }
  }
  std::vector<nn::Param*> all() { return {&mu, &log_scale, &rotation, &opacity, &color}; }
};

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

template <int N>
Eigen::Matrix<double, N, 1> json_vec(const json& j, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != N) throw Error(ErrorKind::Format, std::string("expected ") + std::to_string(N) + " values for " + what);
  return Eigen::Map<const Eigen::Matrix<double, N, 1>>(v.data());
}

void write_pnm_header(std::string& buf, const char* magic, int w, int h) {
  buf += magic;
  buf += "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
}

// Skips whitespace and comments, then reads a decimal integer.
int pnm_int(Reader& r) {
  for (;;) {
    if (r.pos >= r.buf.size()) throw Error(ErrorKind::Format, "truncated image header");
    const char c = r.buf[r.pos];
    if (c == '#') {
      while (r.pos < r.buf.size() && r.buf[r.pos] != '\n') ++r.pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++r.pos;
    } else {
      break;
    }
  }
  int v = 0;
  bool any = false;
  while (r.pos < r.buf.size() && std::isdigit(static_cast<unsigned char>(r.buf[r.pos]))) {
    v = v * 10 + (r.buf[r.pos++] - '0');
    any = true;
    if (v > 1 << 24) throw Error(ErrorKind::Format, "image dimension too large");
  }
  if (!any) throw Error(ErrorKind::Format, "bad image header");
  return v;
}

Eigen::Vector3d hsv_to_rgb(double h, double s, double v) {
  const double c = v * s, hp = std::fmod(h, 1.0) * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Eigen::Vector3d rgb;
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  return rgb + Eigen::Vector3d::Constant(v - c);
}

}  // namespace

void write_events(const fs::path& path, const EventStream& stream) {
  if (path.extension() == ".csv") {
    write_events_csv(path, stream);
  } else {
    write_events_binary(path, stream);
  }
}

EventStream read_events(const fs::path& path) {
  return path.extension() == ".csv" ? read_events_csv(path) : read_events_binary(path);
}

void write_checkpoint(const fs::path& path, json header, std::span<const nn::Param* const> tensors) {
  header["tensors"] = shape_list(tensors);
  const std::string text = header.dump();
  std::string buf(kCheckpointMagic.begin(), kCheckpointMagic.end());
  put<std::uint64_t>(buf, text.size());
  buf += text;
  for (const nn::Param* p : tensors) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) put_f32(buf, p->value.data()[i]);
  }
  std::ofstream out = open_out(path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  finish(out, path);
}

namespace {

json parse_checkpoint(const std::string& buf, const fs::path& path, std::size_t& payload) {
  Reader r{buf, 0, path};
  if (std::memcmp(r.take(8), kCheckpointMagic.data(), 8) != 0) {
    throw Error(ErrorKind::Format, "not a checkpoint: " + path.string());
  }
  const std::uint64_t len = r.read<std::uint64_t>();
  if (len > buf.size()) throw Error(ErrorKind::Format, "truncated checkpoint header");
  const auto* text = reinterpret_cast<const char*>(r.take(len));
  payload = r.pos;
  try {
    return json::parse(text, text + len);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, "bad checkpoint header: " + std::string(e.what()));
  }
}

}  // namespace

json read_checkpoint_header(const fs::path& path) {
  std::size_t payload = 0;
  return parse_checkpoint(read_all(path), path, payload);
}

json read_checkpoint(const fs::path& path, std::span<nn::Param* const> tensors) {
  const std::string buf = read_all(path);
  std::size_t payload = 0;
  json header = parse_checkpoint(buf, path, payload);
  const json& shapes = header.at("tensors");
  if (shapes.size() != tensors.size()) throw Error(ErrorKind::Format, "checkpoint tensor count mismatch");
  Reader r{buf, payload, path};
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    nn::Param& p = *tensors[k];
    if (shapes[k][0].get<Eigen::Index>() != p.value.rows() || shapes[k][1].get<Eigen::Index>() != p.value.cols()) {
      throw Error(ErrorKind::Format, "checkpoint tensor " + std::to_string(k) + " has the wrong shape");
    }
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = get_f32(r.take(4));
    p.zero_grad();
  }
  if (r.pos != buf.size()) throw Error(ErrorKind::Format, "trailing bytes in checkpoint");
  return header;
}

void quantize_float32(std::span<nn::Param* const> tensors) {
  for (nn::Param* p : tensors) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      p->value.data()[i] = static_cast<float>(p->value.data()[i]);
    }
  }
}

void quantize_float32(SceneModel& model) {
  GaussianTensors g(model.canonical);
  quantize_float32(g.all());
  g.store(model.canonical);
  quantize_float32(model.deformation.network().parameters());
  quantize_float32(model.posenet.network().parameters());
}

void save_predictor(const fs::path& path, const TiledFlowPredictor& predictor) {
  const PredictorConfig& c = predictor.config();
  json h = {{"kind", "flow_predictor"},
            {"input", c.input == PredictorInput::CostVolume ? "cost_volume" : "voxel"},
            {"width", c.width},
            {"height", c.height},
            {"bins", c.bins},
            {"patch", c.patch},
            {"context", c.context},
            {"hidden", c.hidden},
            {"flow_scale", c.flow_scale},
            {"search_radius", c.search_radius},
            {"search_step", c.search_step},
            {"network", mlp_spec_json(predictor.network().spec())}};
  write_checkpoint(path, std::move(h), predictor.network().parameters());
}

TiledFlowPredictor load_predictor(const fs::path& path) {
  const json h = read_checkpoint_header(path);
  if (h.value("kind", "") != "flow_predictor") throw Error(ErrorKind::Format, "not a predictor checkpoint");
  PredictorConfig c;
  c.input = h.at("input") == "voxel" ? PredictorInput::Voxel : PredictorInput::CostVolume;
  c.width = h.at("width");
  c.height = h.at("height");
  c.bins = h.at("bins");
  c.patch = h.at("patch");
  c.context = h.at("context");
  c.hidden = h.at("hidden").get<std::vector<int>>();
  c.flow_scale = h.at("flow_scale");
  c.search_radius = h.at("search_radius");
  c.search_step = h.at("search_step");
  TiledFlowPredictor p(c, 0);
  check_spec(h.at("network"), p.network().spec(), "predictor");
  read_checkpoint(path, p.network().parameters());
  return p;
}

void save_adapter(const fs::path& path, const nn::LoraAdapter& adapter, const TiledFlowPredictor& base) {
  std::vector<const nn::Param*> ts;
  for (const nn::LoraLayer& l : adapter.layers) {
    ts.push_back(&l.a);
    ts.push_back(&l.b);
  }
  json h = {{"kind", "lora_adapter"},
            {"rank", adapter.rank},
            {"layers", adapter.layers.size()},
            {"base_checksum", hex64(base.base_checksum())}};
  write_checkpoint(path, std::move(h), ts);
}

nn::LoraAdapter load_adapter(const fs::path& path, const TiledFlowPredictor& base) {
  const json h = read_checkpoint_header(path);
  if (h.value("kind", "") != "lora_adapter") throw Error(ErrorKind::Format, "not an adapter checkpoint");
  if (h.at("base_checksum") != hex64(base.base_checksum())) {
    throw Error(ErrorKind::Config, "adapter was trained against a different predictor");
  }
  std::mt19937_64 rng(0);
  nn::LoraAdapter a = nn::make_lora(base.network(), h.at("rank").get<int>(), 1.0, rng);
  if (a.layers.size() != h.at("layers").get<std::size_t>()) throw Error(ErrorKind::Format, "adapter layer count mismatch");
  read_checkpoint(path, a.parameters());
  return a;
}

void save_model(const fs::path& path, const SceneModel& model) {
  GaussianTensors g(model.canonical);
  std::vector<const nn::Param*> ts = const_view(g.all());
  for (const nn::Param* p : model.deformation.network().parameters()) ts.push_back(p);
  for (const nn::Param* p : model.posenet.network().parameters()) ts.push_back(p);
  std::vector<std::int64_t> ids;
  for (const Gaussian& x : model.canonical) ids.push_back(x.id);
  const DeformationConfig& d = model.deformation.config();
  json h = {{"kind", "scene_model"},
            {"ids", ids},
            {"deformation",
             {{"position_frequencies", d.position_frequencies},
              {"time_frequencies", d.time_frequencies},
              {"depth", d.depth},
              {"width", d.width},
              {"skip_layer", d.skip_layer}}},
            {"posenet", {{"frequencies", model.posenet.config().frequencies}, {"hidden", model.posenet.config().hidden}}}};
  write_checkpoint(path, std::move(h), ts);
}

SceneModel load_model(const fs::path& path) {
  const json h = read_checkpoint_header(path);
  if (h.value("kind", "") != "scene_model") throw Error(ErrorKind::Format, "not a scene model checkpoint");
  DeformationConfig d;
  const json& jd = h.at("deformation");
  d.position_frequencies = jd.at("position_frequencies");
  d.time_frequencies = jd.at("time_frequencies");
  d.depth = jd.at("depth");
  d.width = jd.at("width");
  d.skip_layer = jd.at("skip_layer");
  PoseNetConfig pc;
  pc.frequencies = h.at("posenet").at("frequencies");
  pc.hidden = h.at("posenet").at("hidden");
  const auto ids = h.at("ids").get<std::vector<std::int64_t>>();

  SceneModel m{std::vector<Gaussian>(ids.size()), DeformationField(d, 0), PoseNet(pc, 0)};
  GaussianTensors g(ids.size());
  std::vector<nn::Param*> ts = g.all();
  for (nn::Param* p : m.deformation.network().parameters()) ts.push_back(p);
  for (nn::Param* p : m.posenet.network().parameters()) ts.push_back(p);
  read_checkpoint(path, ts);
  g.store(m.canonical);
  for (std::size_t i = 0; i < ids.size(); ++i) m.canonical[i].id = ids[i];
  return m;
}

json scene_to_json(const SceneSpec& s) {
  json gs = json::array();
  for (const Gaussian& g : s.gaussians) {
    gs.push_back({{"id", g.id},
                  {"mu", vec_json(g.mu)},
                  {"scale", vec_json(g.log_scale.array().exp().matrix())},
                  {"quaternion", vec_json(g.rotation)},
                  {"opacity", g.opacity()},
                  {"color", vec_json(g.color)}});
  }
  json cams = json::array();
  for (const Keyframe& k : s.camera) {
    const Eigen::Quaterniond& q = k.pose.rotation;
    cams.push_back({{"t_us", k.t},
                    {"rotation_wxyz", {q.w(), q.x(), q.y(), q.z()}},
                    {"translation", vec_json(k.pose.translation)}});
  }
  return {{"intrinsics",
           {{"fx", s.intr.fx}, {"fy", s.intr.fy}, {"cx", s.intr.cx}, {"cy", s.intr.cy},
            {"width", s.intr.width}, {"height", s.intr.height}}},
          {"background", vec_json(s.background)},
          {"gaussians", gs},
          {"camera", cams},
          {"motion",
           {{"amplitude", vec_json(s.motion.amplitude)},
            {"period_us", s.motion.period_us},
            {"phase", s.motion.phase},
            {"dynamic_ids", s.motion.dynamic_ids}}},
          {"dense_frames", s.dense_frames},
          {"frame_interval_us", s.frame_interval_us},
          {"keyframe_stride", s.keyframe_stride},
          {"event_substeps", s.event_substeps}};
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec s;
  try {
    const json& in = j.at("intrinsics");
    s.intr = {in.at("fx").get<double>(), in.at("fy").get<double>(), in.at("cx").get<double>(),
              in.at("cy").get<double>(), in.at("width").get<int>(),  in.at("height").get<int>()};
    s.background = json_vec<3>(j.at("background"), "background");
    for (const json& g : j.at("gaussians")) {
      Gaussian x;
      x.id = g.at("id");
      x.mu = json_vec<3>(g.at("mu"), "mu");
      const Eigen::Vector3d scale = json_vec<3>(g.at("scale"), "scale");
      if ((scale.array() <= 0.0).any()) throw Error(ErrorKind::Format, "Gaussian scale must be positive");
      x.log_scale = scale.array().log();
      x.rotation = json_vec<4>(g.at("quaternion"), "quaternion");
      if (!(x.rotation.norm() > 0.0)) throw Error(ErrorKind::Format, "zero quaternion");
      const double o = g.at("opacity");
      if (!(o > 0.0 && o < 1.0)) throw Error(ErrorKind::Format, "opacity must lie in (0, 1)");
      x.set_opacity(o);
      x.color = json_vec<3>(g.at("color"), "color");
      s.gaussians.push_back(x);
    }
    for (const json& c : j.at("camera")) {
      const Eigen::Vector4d q = json_vec<4>(c.at("rotation_wxyz"), "rotation");
      Pose p;
      p.rotation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]).normalized();
      p.translation = json_vec<3>(c.at("translation"), "translation");
      s.camera.push_back({c.at("t_us").get<Timestamp>(), p});
    }
    const json& m = j.at("motion");
    s.motion.amplitude = json_vec<3>(m.at("amplitude"), "amplitude");
    s.motion.period_us = m.at("period_us");
    s.motion.phase = m.value("phase", 0.0);
    s.motion.dynamic_ids = m.at("dynamic_ids").get<std::vector<std::int64_t>>();
    s.dense_frames = j.at("dense_frames");
    s.frame_interval_us = j.at("frame_interval_us");
    s.keyframe_stride = j.value("keyframe_stride", 5);
    s.event_substeps = j.value("event_substeps", 4);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("scene JSON: ") + e.what());
  }
  s.validate();
  return s;
}

void save_scene(const fs::path& path, const SceneSpec& scene) { write_text(path, scene_to_json(scene).dump(1) + "\n"); }

SceneSpec load_scene(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_all(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, path.string() + ": " + e.what());
  }
  return scene_from_json(j);
}

void write_pnm(const fs::path& path, const Image& img, double gamma) {
  if (img.channels != 1 && img.channels != 3) throw Error(ErrorKind::Shape, "PNM needs 1 or 3 channels");
  std::string buf;
  write_pnm_header(buf, img.channels == 3 ? "P6" : "P5", img.width, img.height);
  for (double v : img.data) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    buf.push_back(static_cast<char>(std::lround(255.0 * std::pow(c, 1.0 / gamma))));
  }
  std::ofstream out = open_out(path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  finish(out, path);
}

Image read_pnm(const fs::path& path, double gamma) {
  const std::string buf = read_all(path);
  Reader r{buf, 0, path};
  const auto* m = r.take(2);
  if (m[0] != 'P' || (m[1] != '6' && m[1] != '5')) throw Error(ErrorKind::Format, "not a binary PPM/PGM");
  const int channels = m[1] == '6' ? 3 : 1;
  const int w = pnm_int(r), h = pnm_int(r), maxval = pnm_int(r);
  if (maxval != 255) throw Error(ErrorKind::Format, "only 8-bit images are supported");
  r.take(1);
  Image img(w, h, channels);
  const auto* px = r.take(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = std::pow(px[i] / 255.0, gamma);
  return img;
}

void write_pfm(const fs::path& path, const Image& plane) {
  if (plane.channels != 1) throw Error(ErrorKind::Shape, "PFM plane needs one channel");
  std::string buf = "Pf\n" + std::to_string(plane.width) + " " + std::to_string(plane.height) + "\n-1.0\n";
  for (int y = plane.height - 1; y >= 0; --y) {
    for (int x = 0; x < plane.width; ++x) put_f32(buf, plane(x, y));
  }
  std::ofstream out = open_out(path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  finish(out, path);
}

Image read_pfm(const fs::path& path) {
  const std::string buf = read_all(path);
  std::istringstream hdr(buf);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  hdr >> magic >> w >> h >> scale;
  if (!hdr || magic != "Pf" || w <= 0 || h <= 0) throw Error(ErrorKind::Format, "not a single-channel PFM");
  if (scale >= 0.0) throw Error(ErrorKind::Format, "big-endian PFM is not supported");
  Reader r{buf, static_cast<std::size_t>(hdr.tellg()) + 1, path};
  Image img(w, h, 1);
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) img(x, y) = get_f32(r.take(4));
  }
  return img;
}

Image depth_preview(const Image& depth) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (double d : depth.data) {
    if (d > 0.0 && std::isfinite(d)) {
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  }
  Image out(depth.width, depth.height, 1);
  if (!(hi > 0.0)) return out;
  const double span = std::max(hi - lo, 1e-12);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const double d = depth.data[i];
    if (d > 0.0 && std::isfinite(d)) out.data[i] = 1.0 - 0.8 * (d - lo) / span;
  }
  return out;
}

void write_flo(const fs::path& path, const FlowField& flow) {
  std::string buf = "PIEH";
  put<std::int32_t>(buf, flow.width);
  put<std::int32_t>(buf, flow.height);
  for (std::size_t i = 0; i < flow.u.size(); ++i) {
    put_f32(buf, flow.u[i]);
    put_f32(buf, flow.v[i]);
  }
  std::ofstream out = open_out(path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  finish(out, path);
}

FlowField read_flo(const fs::path& path) {
  const std::string buf = read_all(path);
  Reader r{buf, 0, path};
  if (std::memcmp(r.take(4), "PIEH", 4) != 0) throw Error(ErrorKind::Format, "not a .flo file");
  const int w = r.read<std::int32_t>(), h = r.read<std::int32_t>();
  if (w <= 0 || h <= 0) throw Error(ErrorKind::Format, "bad .flo dimensions");
  FlowField f(w, h);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    f.u[i] = get_f32(r.take(4));
    f.v[i] = get_f32(r.take(4));
  }
  return f;
}

Image flow_color_wheel(const FlowField& flow, double max_magnitude) {
  if (max_magnitude <= 0.0) {
    for (std::size_t i = 0; i < flow.u.size(); ++i) max_magnitude = std::max(max_magnitude, std::hypot(flow.u[i], flow.v[i]));
  }
  Image out(flow.width, flow.height, 3);
  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      const Eigen::Vector2d f = flow.at(x, y);
      const double mag = max_magnitude > 0.0 ? std::min(1.0, f.norm() / max_magnitude) : 0.0;
      const double hue = (std::atan2(-f.y(), -f.x()) / std::numbers::pi + 1.0) / 2.0;
      const Eigen::Vector3d rgb = hsv_to_rgb(hue, mag, 1.0);
      for (int c = 0; c < 3; ++c) out(x, y, c) = rgb[c];
    }
  }
  return out;
}

std::string read_text(const fs::path& path) { return read_all(path); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out = open_out(path);
  out << text;
  finish(out, path);
}

}  // namespace evgs
