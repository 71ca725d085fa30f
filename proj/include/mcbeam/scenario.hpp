// Problem-instance generation: a base station serving grouped single-antenna
// users placed uniformly in a rectangle, distance path loss plus Rayleigh
// fading, explicit unit handling (dB / dBm / linear / watts).
//
// Sampling is a pure function of (config, seed, sample index): instance i is
// drawn from its own stream, so datasets are order-independent and can be
// generated in parallel.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcbeam/complex.hpp"
#include "mcbeam/rng.hpp"

namespace mcbeam {

inline double pathloss_db(double distance_m) {
  if (!(distance_m > 0.0)) throw std::invalid_argument("pathloss_db: distance must be positive");
  return 32.6 + 36.7 * std::log10(distance_m);
}

inline double dbm_to_watt(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
inline double watt_to_dbm(double w) { return 10.0 * std::log10(w) + 30.0; }
inline double db_to_lin(double db) { return std::pow(10.0, db / 10.0); }
inline double lin_to_db(double lin) { return 10.0 * std::log10(lin); }

struct ScenarioConfig {
  int n = 8;
  std::vector<int> k_per_group{4};
  std::vector<double> sinr_target_db{10.0};  // per group
  double noise_dbm = -100.0;
  double bs_xyz[3] = {0.0, 0.0, 20.0};
  double user_box[4] = {85.0, 95.0, 85.0, 115.0};  // x_min, x_max, y_min, y_max
  std::uint64_t seed = 1;

  int groups() const { return static_cast<int>(k_per_group.size()); }
  int users() const {
    int k = 0;
    for (int km : k_per_group) k += km;
    return k;
  }

  void validate() const {
    if (n < 1) throw std::invalid_argument("scenario: antenna count must be >= 1");
    if (k_per_group.empty()) throw std::invalid_argument("scenario: need at least one group");
    for (int km : k_per_group) {
      if (km < 1) throw std::invalid_argument("scenario: every group needs at least one user");
    }
    if (sinr_target_db.size() != k_per_group.size()) {
      throw std::invalid_argument("scenario: one SINR target per group required");
    }
    if (!(user_box[0] < user_box[1]) || !(user_box[2] < user_box[3])) {
      throw std::invalid_argument("scenario: user box is empty");
    }
  }
};

struct ChannelInstance {
  CMatrix H;                       // N x K, columns grouped [H_1 ... H_M]
  std::vector<int> k_per_group;    // users per group
  std::vector<int> offsets;        // prefix sums, size M+1
  std::vector<double> sigma2;      // per-user noise power, watts
  std::vector<double> gamma_lin;   // per-group SINR target, linear

  int n() const { return H.rows; }
  int users() const { return H.cols; }
  int groups() const { return static_cast<int>(k_per_group.size()); }
  int group_of(int user) const {
    for (int m = 0; m < groups(); ++m) {
      if (user < offsets[static_cast<std::size_t>(m) + 1]) return m;
    }
    throw std::out_of_range("group_of: user index out of range");
  }

  void validate() const {
    if (H.rows < 1 || H.cols < 1) throw std::invalid_argument("instance: empty channel matrix");
    int k = 0;
    for (int km : k_per_group) k += km;
    if (k != H.cols) throw std::invalid_argument("instance: group sizes do not match column count");
    if (static_cast<int>(sigma2.size()) != H.cols) throw std::invalid_argument("instance: one noise power per user required");
    if (gamma_lin.size() != k_per_group.size()) throw std::invalid_argument("instance: one SINR target per group required");
    for (double s : sigma2) {
      if (!(s > 0.0)) throw std::invalid_argument("instance: noise power must be positive");
    }
    for (double g : gamma_lin) {
      if (!(g > 0.0)) throw std::invalid_argument("instance: SINR target must be positive");
    }
    for (const auto& v : H.a) {
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
        throw std::invalid_argument("instance: non-finite channel entry");
      }
    }
  }
};

inline std::vector<int> prefix_offsets(const std::vector<int>& k_per_group) {
  std::vector<int> off(k_per_group.size() + 1, 0);
  for (std::size_t m = 0; m < k_per_group.size(); ++m) off[m + 1] = off[m] + k_per_group[m];
  return off;
}

struct UserDraw {
  double x = 0.0;
  double y = 0.0;
  double distance_m = 0.0;
  double pathloss_db = 0.0;
  double gain_lin = 0.0;
};

struct SampledInstance {
  ChannelInstance instance;
  std::vector<UserDraw> draws;
};

// One instance from stream (seed, index): per user, a uniform position in the
// box, then N unit-variance complex fading coefficients scaled by the
// amplitude path gain.
inline SampledInstance sample_detailed(const ScenarioConfig& cfg, std::uint64_t index) {
  cfg.validate();
  Rng rng(cfg.seed, index);
  SampledInstance out;
  ChannelInstance& inst = out.instance;
  const int k = cfg.users();
  inst.H = CMatrix(cfg.n, k);
  inst.k_per_group = cfg.k_per_group;
  inst.offsets = prefix_offsets(cfg.k_per_group);
  inst.sigma2.assign(static_cast<std::size_t>(k), dbm_to_watt(cfg.noise_dbm));
  for (double gdb : cfg.sinr_target_db) inst.gamma_lin.push_back(db_to_lin(gdb));

  const double root_half = std::sqrt(0.5);
  for (int u = 0; u < k; ++u) {
    UserDraw d;
    d.x = rng.uniform(cfg.user_box[0], cfg.user_box[1]);
    d.y = rng.uniform(cfg.user_box[2], cfg.user_box[3]);
    const double dx = d.x - cfg.bs_xyz[0];
    const double dy = d.y - cfg.bs_xyz[1];
    const double dz = cfg.bs_xyz[2];  // users at z = 0
    d.distance_m = std::sqrt(dx * dx + dy * dy + dz * dz);
    d.pathloss_db = pathloss_db(d.distance_m);
    d.gain_lin = std::pow(10.0, -d.pathloss_db / 10.0);
    const double amp = std::sqrt(d.gain_lin);
    for (int a = 0; a < cfg.n; ++a) {
      inst.H(a, u) = {amp * root_half * rng.normal(), amp * root_half * rng.normal()};
    }
    out.draws.push_back(d);
  }
  return out;
}

inline ChannelInstance sample_instance(const ScenarioConfig& cfg, std::uint64_t index) {
  return sample_detailed(cfg, index).instance;
}

// ---------------------------------------------------------------------------
// Dataset files
//
// Text: one JSON object per line with fields n, gamma_db, noise_dbm, groups;
// groups is a list over groups of lists over users of per-antenna [re, im]
// pairs. Binary: per record, a little-endian int32 header (N, M, K_1..K_M),
// then per user the interleaved re/im f64 channel column, then per-user
// sigma^2 (watts) and per-group gamma (linear).
// ---------------------------------------------------------------------------

inline nlohmann::json instance_to_json(const ChannelInstance& inst) {
  inst.validate();
  const double s0 = inst.sigma2[0];
  for (double s : inst.sigma2) {
    if (s != s0) throw std::invalid_argument("text dataset: per-user noise must be uniform");
  }
  nlohmann::json j;
  j["n"] = inst.n();
  nlohmann::json gdb = nlohmann::json::array();
  for (double g : inst.gamma_lin) gdb.push_back(lin_to_db(g));
  j["gamma_db"] = gdb;
  j["noise_dbm"] = watt_to_dbm(s0);
  nlohmann::json groups = nlohmann::json::array();
  for (int m = 0; m < inst.groups(); ++m) {
    nlohmann::json users = nlohmann::json::array();
    for (int u = inst.offsets[static_cast<std::size_t>(m)]; u < inst.offsets[static_cast<std::size_t>(m) + 1]; ++u) {
      nlohmann::json chan = nlohmann::json::array();
      for (int a = 0; a < inst.n(); ++a) {
        chan.push_back({inst.H(a, u).real(), inst.H(a, u).imag()});
      }
      users.push_back(chan);
    }
    groups.push_back(users);
  }
  j["groups"] = groups;
  return j;
}

inline ChannelInstance instance_from_json(const nlohmann::json& j) {
  ChannelInstance inst;
  const int n = j.at("n").get<int>();
  const auto& groups = j.at("groups");
  const double noise_w = dbm_to_watt(j.at("noise_dbm").get<double>());
  int k = 0;
  for (const auto& g : groups) {
    inst.k_per_group.push_back(static_cast<int>(g.size()));
    k += static_cast<int>(g.size());
  }
  inst.offsets = prefix_offsets(inst.k_per_group);
  inst.H = CMatrix(n, k);
  int u = 0;
  for (const auto& g : groups) {
    for (const auto& chan : g) {
      if (static_cast<int>(chan.size()) != n) throw std::invalid_argument("text dataset: antenna count mismatch");
      for (int a = 0; a < n; ++a) {
        inst.H(a, u) = {chan[static_cast<std::size_t>(a)][0].get<double>(), chan[static_cast<std::size_t>(a)][1].get<double>()};
      }
      ++u;
    }
  }
  inst.sigma2.assign(static_cast<std::size_t>(k), noise_w);
  for (const auto& gdb : j.at("gamma_db")) inst.gamma_lin.push_back(db_to_lin(gdb.get<double>()));
  inst.validate();
  return inst;
}

inline void write_dataset_text(const std::string& path, const std::vector<ChannelInstance>& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& inst : data) out << instance_to_json(inst).dump() << "\n";
}

inline std::vector<ChannelInstance> read_dataset_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<ChannelInstance> data;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    data.push_back(instance_from_json(nlohmann::json::parse(line)));
  }
  return data;
}

namespace detail {

template <typename T>
void put_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get_raw(std::istream& in, T& v) {
  return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

}  // namespace detail

inline void write_dataset_bin(const std::string& path, const std::vector<ChannelInstance>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& inst : data) {
    inst.validate();
    detail::put_raw<std::int32_t>(out, inst.n());
    detail::put_raw<std::int32_t>(out, inst.groups());
    for (int km : inst.k_per_group) detail::put_raw<std::int32_t>(out, km);
    for (int u = 0; u < inst.users(); ++u) {
      for (int a = 0; a < inst.n(); ++a) {
        detail::put_raw<double>(out, inst.H(a, u).real());
        detail::put_raw<double>(out, inst.H(a, u).imag());
      }
    }
    for (double s : inst.sigma2) detail::put_raw<double>(out, s);
    for (double g : inst.gamma_lin) detail::put_raw<double>(out, g);
  }
}

inline std::vector<ChannelInstance> read_dataset_bin(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<ChannelInstance> data;
  std::int32_t n = 0;
  while (detail::get_raw(in, n)) {
    std::int32_t m = 0;
    if (!detail::get_raw(in, m) || n < 1 || m < 1) throw std::runtime_error("binary dataset: corrupt header");
    ChannelInstance inst;
    int k = 0;
    for (int g = 0; g < m; ++g) {
      std::int32_t km = 0;
      if (!detail::get_raw(in, km) || km < 1) throw std::runtime_error("binary dataset: corrupt header");
      inst.k_per_group.push_back(km);
      k += km;
    }
    inst.offsets = prefix_offsets(inst.k_per_group);
    inst.H = CMatrix(n, k);
    for (int u = 0; u < k; ++u) {
      for (int a = 0; a < n; ++a) {
        double re = 0.0, im = 0.0;
        if (!detail::get_raw(in, re) || !detail::get_raw(in, im)) throw std::runtime_error("binary dataset: truncated record");
        inst.H(a, u) = {re, im};
      }
    }
    inst.sigma2.resize(static_cast<std::size_t>(k));
    for (double& s : inst.sigma2) {
      if (!detail::get_raw(in, s)) throw std::runtime_error("binary dataset: truncated record");
    }
    inst.gamma_lin.resize(static_cast<std::size_t>(m));
    for (double& g : inst.gamma_lin) {
      if (!detail::get_raw(in, g)) throw std::runtime_error("binary dataset: truncated record");
    }
    inst.validate();
    data.push_back(std::move(inst));
  }
  return data;
}

}  // namespace mcbeam
