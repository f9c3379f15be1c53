#include "icwlm/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace icwlm {

using nlohmann::json;

namespace {

constexpr const char* kLayout =
    "slot-major, column-major per matrix, real block then imaginary block";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

void put_matrix(std::string& out, const CMatrix& X) {
  const RVector packed = pack_complex(X);
  for (Eigen::Index i = 0; i < packed.size(); ++i)
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(packed(i))));
}

CMatrix get_matrix(const std::string& in, std::size_t& pos, Eigen::Index n_t, Eigen::Index k) {
  RVector packed(2 * n_t * k);
  for (Eigen::Index i = 0; i < packed.size(); ++i, pos += 4)
    packed(i) = static_cast<double>(std::bit_cast<float>(get_u32(in, pos)));
  return unpack_complex(packed, n_t, k);
}

json loss_pattern(Task task, int t_history, int shots) {
  json positions = json::array();
  if (task == Task::kPrediction) {
    for (int i = 0; i < t_history; ++i) positions.push_back(2 * i);
  } else {
    for (int i = 0; i <= shots; ++i) positions.push_back(2 * i);
  }
  return positions;
}

}  // namespace

void to_json(json& j, const SystemConfig& c) {
  j = json{{"n_h", c.n_h},
           {"n_v", c.n_v},
           {"n_t", c.n_t()},
           {"k_users", c.k_users},
           {"f_c", c.f_c},
           {"delta_f", c.delta_f},
           {"m_subcarriers", c.m_subcarriers},
           {"d_h", c.d_h},
           {"d_v", c.d_v},
           {"slot_duration", c.slot_duration},
           {"p_max", c.p_max},
           {"sigma2", c.sigma2},
           {"n_clusters", c.n_clusters},
           {"paths_per_cluster", c.paths_per_cluster}};
}

void from_json(const json& j, SystemConfig& c) {
  SystemConfig d = SystemConfig::with_carrier(j.value("f_c", SystemConfig{}.f_c));
  c.n_h = j.value("n_h", d.n_h);
  c.n_v = j.value("n_v", d.n_v);
  c.k_users = j.value("k_users", d.k_users);
  c.f_c = d.f_c;
  c.delta_f = j.value("delta_f", d.delta_f);
  c.m_subcarriers = j.value("m_subcarriers", d.m_subcarriers);
  c.d_h = j.value("d_h", d.d_h);
  c.d_v = j.value("d_v", d.d_v);
  c.slot_duration = j.value("slot_duration", d.slot_duration);
  c.p_max = j.value("p_max", d.p_max);
  c.sigma2 = j.value("sigma2", d.sigma2);
  c.n_clusters = j.value("n_clusters", d.n_clusters);
  c.paths_per_cluster = j.value("paths_per_cluster", d.paths_per_cluster);
  if (j.contains("n_t") && j["n_t"].get<int>() != c.n_t())
    throw Error("system config: n_t must equal n_h * n_v");
}

std::string encode_wds1(const TaskDataset& ds) {
  const int slots = ds.samples.empty() ? 1 : static_cast<int>(ds.samples[0].history.size());
  const bool has_labels = !ds.labels.empty();
  if (has_labels && ds.labels.size() != ds.samples.size())
    throw Error("wds1: label count does not match sample count");

  json samples = {{"velocity_kmh", json::array()},
                  {"snr_db", json::array()},
                  {"seed", json::array()},
                  {"subcarrier", json::array()}};
  for (const auto& s : ds.samples) {
    if (static_cast<int>(s.history.size()) != slots)
      throw Error("wds1: samples must share the slot count");
    samples["velocity_kmh"].push_back(s.velocity_kmh);
    samples["snr_db"].push_back(s.snr_db);
    samples["seed"].push_back(s.seed);
    samples["subcarrier"].push_back(s.subcarrier);
  }

  json header = {{"version", kWds1Version},
                 {"task", task_name(ds.task)},
                 {"cfg", ds.cfg},
                 {"n_samples", ds.samples.size()},
                 {"t_history", slots - 1},
                 {"slots_per_sample", slots},
                 {"label_slots", has_labels ? 1 : 0},
                 {"dtype", "f32"},
                 {"layout", kLayout},
                 {"norm_scale", ds.norm_scale},
                 {"shots", ds.task == Task::kPrediction ? slots - 2 : 4},
                 {"loss_positions", loss_pattern(ds.task, slots - 1, 4)},
                 {"samples", samples}};
  const std::string text = header.dump();

  std::string out(kWds1Magic, 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  const auto n_t = ds.cfg.n_t();
  const auto k = ds.cfg.k_users;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    for (const auto& H : ds.samples[i].history) {
      if (H.rows() != n_t || H.cols() != k) throw Error("wds1: matrix shape does not match cfg");
      put_matrix(out, H);
    }
    if (has_labels) put_matrix(out, ds.labels[i]);
  }
  return out;
}

TaskDataset decode_wds1(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kWds1Magic, 4) != 0)
    throw Error("wds1: bad magic");
  const std::uint32_t header_len = get_u32(bytes, 4);
  if (bytes.size() < 8 + static_cast<std::size_t>(header_len))
    throw Error("wds1: truncated header");
  const json header = json::parse(bytes.substr(8, header_len));
  if (header.at("version").get<int>() != kWds1Version) throw Error("wds1: unsupported version");
  if (header.at("dtype").get<std::string>() != "f32") throw Error("wds1: unsupported dtype");

  TaskDataset ds;
  ds.task = task_from_name(header.at("task").get<std::string>());
  ds.cfg = header.at("cfg").get<SystemConfig>();
  ds.norm_scale = header.at("norm_scale").get<double>();
  const auto n = header.at("n_samples").get<std::size_t>();
  const int slots = header.at("slots_per_sample").get<int>();
  const bool has_labels = header.at("label_slots").get<int>() == 1;
  const auto n_t = ds.cfg.n_t();
  const auto k = ds.cfg.k_users;
  const std::size_t matrix_bytes = 4 * 2 * static_cast<std::size_t>(n_t * k);
  const std::size_t expected =
      8 + header_len + n * (slots + (has_labels ? 1 : 0)) * matrix_bytes;
  if (bytes.size() != expected)
    throw Error("wds1: payload size " + std::to_string(bytes.size()) + " != expected " +
                std::to_string(expected));

  const auto& meta = header.at("samples");
  std::size_t pos = 8 + header_len;
  ds.samples.resize(n);
  if (has_labels) ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = ds.samples[i];
    s.velocity_kmh = meta.at("velocity_kmh").at(i).get<double>();
    s.snr_db = meta.at("snr_db").at(i).get<double>();
    s.seed = meta.at("seed").at(i).get<std::uint64_t>();
    s.subcarrier = meta.at("subcarrier").at(i).get<int>();
    s.history.reserve(slots);
    for (int j = 0; j < slots; ++j) s.history.push_back(get_matrix(bytes, pos, n_t, k));
    if (has_labels) ds.labels[i] = get_matrix(bytes, pos, n_t, k);
  }
  return ds;
}

void write_wds1(const std::filesystem::path& path, const TaskDataset& ds) {
  const std::string bytes = encode_wds1(ds);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("wds1: cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("wds1: write failed for " + path.string());
}

TaskDataset read_wds1(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("wds1: cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_wds1(ss.str());
}

json read_wds1_header(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("wds1: cannot open " + path.string());
  char prefix[8];
  f.read(prefix, 8);
  if (!f || std::memcmp(prefix, kWds1Magic, 4) != 0) throw Error("wds1: bad magic");
  const std::uint32_t len = get_u32(std::string(prefix, 8), 4);
  std::string text(len, '\0');
  f.read(text.data(), len);
  if (!f) throw Error("wds1: truncated header");
  return json::parse(text);
}

}  // namespace icwlm
