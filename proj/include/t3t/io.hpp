#pragma once

// File formats.
//
// Tensor file (all integers little-endian):
//   "T3TF" | u16 version (=1) | u8 rank | u32 dim[rank] | f64 payload[prod(dim)]
// Dataset: <dir>/manifest.json plus one tensor file per split (train, val,
//   test) holding one row per sample laid out as
//   [kind, label, gold, onset, question ids (L), candidate ids (M), frames (N*D)].
// Model bundle: <dir>/manifest.json plus one tensor file per parameter.
// Metrics: one JSON object per line. Tables: CSV with a header row.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "t3t/config.hpp"
#include "t3t/model.hpp"
#include "t3t/train.hpp"

namespace t3t {

using json = nlohmann::ordered_json;

inline constexpr char tensor_magic[4] = {'T', '3', 'T', 'F'};
inline constexpr std::uint16_t tensor_version = 1;
inline constexpr int dataset_version = 1;
inline constexpr int bundle_version = 1;

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

template <class T>
T get_le(std::string_view in, std::size_t& pos) {
  if (in.size() - pos < sizeof(T)) throw FormatError("tensor file: truncated header or payload");
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return static_cast<T>(u);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

}  // namespace detail

inline std::string encode_tensor(const Tensor& t) {
  if (t.rank() > 255) throw FormatError("tensor file: rank above 255");
  std::string out(tensor_magic, 4);
  detail::put_le<std::uint16_t>(out, tensor_version);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) {
    if (d > 0xffffffffu) throw FormatError("tensor file: dimension exceeds 32 bits");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + 8 * t.size());
  for (double v : t.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Tensor decode_tensor(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), tensor_magic, 4) != 0)
    throw FormatError("tensor file: bad magic (expected T3TF)");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint16_t>(bytes, pos);
  if (version != tensor_version) throw FormatError("tensor file: unsupported version " + std::to_string(version));
  const auto rank = detail::get_le<std::uint8_t>(bytes, pos);
  Shape shape(rank);
  for (auto& d : shape) {
    d = detail::get_le<std::uint32_t>(bytes, pos);
    if (d == 0) throw FormatError("tensor file: zero dimension");
  }
  const std::size_t n = shape_size(shape);
  if ((bytes.size() - pos) / 8 < n || (bytes.size() - pos) != 8 * n)
    throw FormatError("tensor file: payload holds " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                      std::to_string(8 * n));
  std::vector<double> data(n);
  for (auto& v : data) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, pos));
  return Tensor(std::move(shape), std::move(data));
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) { detail::write_file(path, encode_tensor(t)); }

inline Tensor load_tensor(const std::filesystem::path& path) {
  try {
    return decode_tensor(detail::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Config

inline json to_json(const TaskSpec& t) {
  return json{{"kind", std::string(to_string(t.kind))},
              {"N", t.N},
              {"D", t.D},
              {"L", t.L},
              {"trend_classes", t.trend_classes},
              {"event_classes", t.event_classes},
              {"n_train", t.n_train},
              {"n_val", t.n_val},
              {"n_test", t.n_test},
              {"sigma", t.sigma},
              {"mu", t.mu},
              {"drift", t.drift},
              {"start_spread", t.start_spread},
              {"decay", t.decay},
              {"trend_fraction", t.trend_fraction},
              {"seed", t.seed}};
}

inline json to_json(const ModelConfig& c) {
  return json{{"N", c.N},
              {"D", c.D},
              {"L", c.L},
              {"M", c.M},
              {"vocab", c.vocab},
              {"alpha", c.alpha},
              {"K", c.K},
              {"kernel_width", c.kernel_width},
              {"I", c.I},
              {"use_softmax", c.use_softmax},
              {"heads", c.heads},
              {"residual", c.residual},
              {"dropout_rate", c.dropout_rate},
              {"temporal", c.temporal},
              {"question_fusion", c.question_fusion},
              {"regrounding", c.regrounding},
              {"shared_fusion", c.shared_fusion},
              {"seed", c.seed},
              {"epochs", c.epochs},
              {"task", to_json(c.task)},
              {"optim", json{{"lr", c.optim.lr}, {"beta1", c.optim.beta1}, {"beta2", c.optim.beta2}, {"eps", c.optim.eps}}}};
}

namespace detail {

template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& prefix) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config field '" + prefix + key + "': " + e.what());
  }
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& prefix) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError("config field '" + prefix + it.key() + "': unknown key");
  }
}

}  // namespace detail

inline TaskSpec task_from_json(const json& j, TaskSpec t = {}) {
  if (!j.is_object()) throw ConfigError("config field 'task': expected an object");
  detail::reject_unknown(j,
                         {"kind", "N", "D", "L", "trend_classes", "event_classes", "n_train", "n_val", "n_test", "sigma",
                          "mu", "drift", "start_spread", "decay", "trend_fraction", "seed"},
                         "task.");
  if (auto it = j.find("kind"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("config field 'task.kind': expected a string");
    t.kind = parse_task_kind(it->get<std::string>());
  }
  const std::string p = "task.";
  detail::read_field(j, "N", t.N, p);
  detail::read_field(j, "D", t.D, p);
  detail::read_field(j, "L", t.L, p);
  detail::read_field(j, "trend_classes", t.trend_classes, p);
  detail::read_field(j, "event_classes", t.event_classes, p);
  detail::read_field(j, "n_train", t.n_train, p);
  detail::read_field(j, "n_val", t.n_val, p);
  detail::read_field(j, "n_test", t.n_test, p);
  detail::read_field(j, "sigma", t.sigma, p);
  detail::read_field(j, "mu", t.mu, p);
  detail::read_field(j, "drift", t.drift, p);
  detail::read_field(j, "start_spread", t.start_spread, p);
  detail::read_field(j, "decay", t.decay, p);
  detail::read_field(j, "trend_fraction", t.trend_fraction, p);
  detail::read_field(j, "seed", t.seed, p);
  return t;
}

// Missing keys keep their defaults; when the task block is present and the
// model shape keys are not, the shape follows the task.
inline ModelConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  detail::reject_unknown(j,
                         {"N", "D", "L", "M", "vocab", "alpha", "K", "kernel_width", "I", "use_softmax", "heads",
                          "residual", "dropout_rate", "temporal", "question_fusion", "regrounding", "shared_fusion",
                          "seed", "epochs", "task", "optim"},
                         "");
  ModelConfig c;
  if (auto it = j.find("task"); it != j.end()) {
    c.task = task_from_json(*it);
    c.sync_with_task();
  }
  detail::read_field(j, "N", c.N, "");
  detail::read_field(j, "D", c.D, "");
  detail::read_field(j, "L", c.L, "");
  detail::read_field(j, "M", c.M, "");
  detail::read_field(j, "vocab", c.vocab, "");
  detail::read_field(j, "alpha", c.alpha, "");
  detail::read_field(j, "K", c.K, "");
  detail::read_field(j, "kernel_width", c.kernel_width, "");
  detail::read_field(j, "I", c.I, "");
  detail::read_field(j, "use_softmax", c.use_softmax, "");
  detail::read_field(j, "heads", c.heads, "");
  detail::read_field(j, "residual", c.residual, "");
  detail::read_field(j, "dropout_rate", c.dropout_rate, "");
  detail::read_field(j, "temporal", c.temporal, "");
  detail::read_field(j, "question_fusion", c.question_fusion, "");
  detail::read_field(j, "regrounding", c.regrounding, "");
  detail::read_field(j, "shared_fusion", c.shared_fusion, "");
  detail::read_field(j, "seed", c.seed, "");
  detail::read_field(j, "epochs", c.epochs, "");
  if (auto it = j.find("optim"); it != j.end()) {
    if (!it->is_object()) throw ConfigError("config field 'optim': expected an object");
    detail::reject_unknown(*it, {"lr", "beta1", "beta2", "eps"}, "optim.");
    detail::read_field(*it, "lr", c.optim.lr, "optim.");
    detail::read_field(*it, "beta1", c.optim.beta1, "optim.");
    detail::read_field(*it, "beta2", c.optim.beta2, "optim.");
    detail::read_field(*it, "eps", c.optim.eps, "optim.");
  }
  c.validate();
  c.task.validate();
  return c;
}

inline ModelConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return config_from_json(j);
}

inline ModelConfig load_config(const std::filesystem::path& path) {
  try {
    return parse_config(detail::read_file(path));
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline void save_config(const std::filesystem::path& path, const ModelConfig& c) {
  detail::write_file(path, to_json(c).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Datasets

inline Tensor encode_split(const std::vector<Sample>& samples, const TaskSpec& spec) {
  const std::size_t m = spec.M(), width = 4 + spec.L + m + spec.N * spec.D;
  if (samples.empty()) throw FormatError("dataset: cannot encode an empty split");
  Tensor t({samples.size(), width});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    double* row = t.data().data() + i * width;
    std::size_t k = 0;
    row[k++] = s.kind == TaskKind::event ? 1.0 : 0.0;
    row[k++] = static_cast<double>(s.label);
    row[k++] = static_cast<double>(s.gold);
    row[k++] = static_cast<double>(s.onset);
    for (auto id : s.question_ids) row[k++] = static_cast<double>(id);
    for (auto id : s.candidate_ids) row[k++] = static_cast<double>(id);
    for (double v : s.frames.values.data()) row[k++] = v;
  }
  return t;
}

inline std::vector<Sample> decode_split(const Tensor& t, const TaskSpec& spec) {
  const std::size_t m = spec.M(), width = 4 + spec.L + m + spec.N * spec.D;
  if (t.rank() != 2 || t.cols() != width)
    throw FormatError("dataset: split tensor " + shape_str(t.shape()) + " does not match manifest row width " +
                      std::to_string(width));
  auto as_index = [](double v) {
    if (!(v >= 0.0) || v != std::floor(v) || v > 1e9) throw FormatError("dataset: invalid index value");
    return static_cast<std::size_t>(v);
  };
  std::vector<Sample> out;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    const double* row = t.data().data() + i * width;
    Sample s;
    std::size_t k = 0;
    s.kind = row[k++] == 1.0 ? TaskKind::event : TaskKind::trend;
    s.label = as_index(row[k++]);
    s.gold = as_index(row[k++]);
    if (s.gold >= m) throw FormatError("dataset: gold index out of range");
    s.onset = as_index(row[k++]);
    for (std::size_t l = 0; l < spec.L; ++l) s.question_ids.push_back(as_index(row[k++]));
    for (std::size_t c = 0; c < m; ++c) s.candidate_ids.push_back(as_index(row[k++]));
    s.frames = FrameFeatures(Tensor({spec.N, spec.D}, std::vector<double>(row + k, row + width)));
    out.push_back(std::move(s));
  }
  return out;
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  json manifest{{"format", "t3t-dataset"},
                {"version", dataset_version},
                {"task", to_json(ds.spec)},
                {"row_layout", "kind,label,gold,onset,question[L],candidates[M],frames[N*D]"},
                {"splits", json::array()}};
  const std::pair<const char*, const std::vector<Sample>*> splits[] = {
      {"train", &ds.train}, {"val", &ds.val}, {"test", &ds.test}};
  for (auto [name, samples] : splits) {
    if (samples->empty()) continue;
    const std::string file = std::string(name) + ".t3tf";
    save_tensor(dir / file, encode_split(*samples, ds.spec));
    manifest["splits"].push_back({{"name", name}, {"file", file}, {"count", samples->size()}});
  }
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw FormatError("dataset manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "t3t-dataset") throw FormatError("dataset manifest: not a t3t-dataset");
  if (manifest.value("version", 0) != dataset_version)
    throw FormatError("dataset manifest: unsupported version " + manifest.value("version", json(0)).dump());
  Dataset ds;
  ds.spec = task_from_json(manifest.at("task"));
  ds.spec.validate();
  for (const auto& s : manifest.at("splits")) {
    const auto name = s.at("name").get<std::string>();
    auto samples = decode_split(load_tensor(dir / s.at("file").get<std::string>()), ds.spec);
    if (name == "train")
      ds.train = std::move(samples);
    else if (name == "val")
      ds.val = std::move(samples);
    else if (name == "test")
      ds.test = std::move(samples);
    else
      throw FormatError("dataset manifest: unknown split '" + name + "'");
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Model bundles

inline std::string bundle_file_name(std::string name) {
  for (auto& ch : name)
    if (ch == '/' || ch == '\\') ch = '_';
  return name + ".t3tf";
}

inline void save_bundle(const std::filesystem::path& dir, ModelParams& params, const ModelConfig& cfg) {
  std::filesystem::create_directories(dir);
  json manifest{{"format", "t3t-model"}, {"version", bundle_version}, {"config", to_json(cfg)}, {"tensors", json::array()}};
  params.for_each([&](const std::string& name, Tensor& t) {
    const auto file = bundle_file_name(name);
    save_tensor(dir / file, t);
    manifest["tensors"].push_back({{"name", name}, {"file", file}, {"shape", t.shape()}});
  });
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

struct Bundle {
  ModelConfig config;
  ModelParams params;
};

inline Bundle load_bundle(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw FormatError("model manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "t3t-model") throw FormatError("model manifest: not a t3t-model bundle");
  if (manifest.value("version", 0) != bundle_version) throw FormatError("model manifest: unsupported version");
  Bundle b;
  b.config = config_from_json(manifest.at("config"));
  b.params = ModelParams::init(b.config);
  std::map<std::string, std::string> files;
  for (const auto& t : manifest.at("tensors")) files[t.at("name").get<std::string>()] = t.at("file").get<std::string>();
  b.params.for_each([&](const std::string& name, Tensor& t) {
    auto it = files.find(name);
    if (it == files.end()) throw FormatError("model manifest: missing tensor '" + name + "'");
    Tensor loaded = load_tensor(dir / it->second);
    if (loaded.shape() != t.shape())
      throw FormatError("model bundle: tensor '" + name + "' has shape " + shape_str(loaded.shape()) + ", expected " +
                        shape_str(t.shape()));
    t = std::move(loaded);
    t.set_requires_grad(true);
  });
  return b;
}

// ---------------------------------------------------------------------------
// Metrics and tables

inline std::string metrics_jsonl(const Metrics& m) {
  json j{{"epoch", m.epoch}, {"split", m.split}, {"loss", m.loss}, {"accuracy", m.accuracy}};
  j["trend_accuracy"] = m.trend_accuracy ? json(*m.trend_accuracy) : json(nullptr);
  j["event_accuracy"] = m.event_accuracy ? json(*m.event_accuracy) : json(nullptr);
  j["count"] = m.count;
  j["wall_seconds"] = m.wall_seconds;
  return j.dump();
}

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

}  // namespace detail

// name,alpha,runs,median_accuracy,mean_accuracy,min_accuracy,max_accuracy,
// mean_test_loss,seeds,accuracies,best
inline std::string table_csv(const std::vector<TableRow>& rows, bool mark_best = false) {
  std::string out = "name,alpha,runs,median_accuracy,mean_accuracy,min_accuracy,max_accuracy,mean_test_loss,seeds,accuracies";
  out += mark_best ? ",best\n" : "\n";
  const std::size_t best = rows.empty() ? 0 : best_row(rows);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    double sum = 0.0, lsum = 0.0, mn = 1.0, mx = 0.0;
    std::string seeds, accs;
    for (const auto& run : r.runs) {
      sum += run.test_accuracy;
      lsum += run.test_loss;
      mn = std::min(mn, run.test_accuracy);
      mx = std::max(mx, run.test_accuracy);
      if (!seeds.empty()) seeds += ";", accs += ";";
      seeds += std::to_string(run.seed);
      accs += detail::fmt(run.test_accuracy);
    }
    const double n = static_cast<double>(std::max<std::size_t>(r.runs.size(), 1));
    out += r.name + "," + detail::fmt(r.alpha) + "," + std::to_string(r.runs.size()) + "," +
           detail::fmt(r.median_accuracy()) + "," + detail::fmt(sum / n) + "," + detail::fmt(mn) + "," +
           detail::fmt(mx) + "," + detail::fmt(lsum / n) + "," + seeds + "," + accs;
    out += mark_best ? (i == best ? ",1\n" : ",0\n") : "\n";
  }
  return out;
}

// frame,delta,ts_min,ts_max,ts_mean,ts_std,td_min,td_max,td_mean,td_std,
// dev_min,dev_max,dev_mean,dev_std
inline std::string scale_csv(const ScaleAnalysis& a) {
  std::string out =
      "frame,delta,ts_min,ts_max,ts_mean,ts_std,td_min,td_max,td_mean,td_std,dev_min,dev_max,dev_mean,dev_std\n";
  for (const auto& r : a.rows) {
    out += std::to_string(r.frame) + "," + detail::fmt(r.delta);
    for (const Summary* s : {&r.ts, &r.td, &r.deviation})
      out += "," + detail::fmt(s->min) + "," + detail::fmt(s->max) + "," + detail::fmt(s->mean) + "," + detail::fmt(s->std);
    out += "\n";
  }
  return out;
}

// sample,frame,ts_norm,td_norm,deviation
inline std::string scale_detail_csv(const ScaleAnalysis& a) {
  std::string out = "sample,frame,ts_norm,td_norm,deviation\n";
  for (std::size_t s = 0; s < a.ts_norm.size(); ++s)
    for (std::size_t n = 0; n < a.ts_norm[s].size(); ++n)
      out += std::to_string(s) + "," + std::to_string(n + 1) + "," + detail::fmt(a.ts_norm[s][n]) + "," +
             detail::fmt(a.td_norm[s][n]) + "," + detail::fmt(a.deviation[s][n]) + "\n";
  return out;
}

}  // namespace t3t
