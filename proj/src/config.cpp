#include "mpnerf/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "mpnerf/errors.hpp"

namespace mpnerf::train {

namespace {

std::string trim(const std::string& s) {
  auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(key, trim(item)));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (num_planes < 2) throw ConfigError("config: num_planes must be >= 2");
  if (!(depth_near > 0) || !(depth_far > depth_near))
    throw ConfigError("config: need 0 < depth_near < depth_far");
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
  if (!(lr > 0)) throw ConfigError("config: lr must be positive");
  if (!(lr_pose_mult > 0)) throw ConfigError("config: lr_pose_mult must be positive");
  if (delta_mode != "ray" && delta_mode != "axial")
    throw ConfigError("config: delta_mode must be 'ray' or 'axial'");
  if (threads < 0) throw ConfigError("config: threads must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("config: checkpoint_every must be >= 0");
  weights().validate();
  network_spec().validate();
}

loss::LossWeights TrainConfig::weights() const {
  return loss::LossWeights{w_l1, w_ssim, w_smooth, w_consist, w_reproj};
}

net::NetworkSpec TrainConfig::network_spec() const {
  net::NetworkSpec s;
  s.seed = seed;
  s.d_min = disparity_min();
  s.d_max = disparity_max();
  s.pe_bands = pe_bands;
  s.depth_c1 = depth_c1;
  s.depth_c2 = depth_c2;
  s.depth_c3 = depth_c3;
  s.feature_channels = feature_channels;
  s.pose_channels = pose_channels;
  s.decoder_channels = decoder_channels;
  s.depth_head_bias = depth_head_bias;
  s.density_head_bias = density_head_bias;
  return s;
}

mpi::DeltaMode TrainConfig::delta() const {
  return delta_mode == "axial" ? mpi::DeltaMode::axial : mpi::DeltaMode::ray;
}

std::string TrainConfig::canonical() const {
  std::map<std::string, std::string> kv;
  kv["seed"] = std::to_string(seed);
  kv["num_planes"] = std::to_string(num_planes);
  kv["depth_near"] = fmt(depth_near);
  kv["depth_far"] = fmt(depth_far);
  kv["batch_size"] = std::to_string(batch_size);
  kv["epochs"] = std::to_string(epochs);
  kv["lr"] = fmt(lr);
  kv["lr_pose_mult"] = fmt(lr_pose_mult);
  kv["depth_head_bias"] = fmt(depth_head_bias);
  kv["density_head_bias"] = fmt(density_head_bias);
  std::string halves;
  for (size_t i = 0; i < lr_halve_epochs.size(); ++i)
    halves += (i ? "," : "") + std::to_string(lr_halve_epochs[i]);
  kv["lr_halve_epochs"] = halves;
  kv["w_l1"] = fmt(w_l1);
  kv["w_ssim"] = fmt(w_ssim);
  kv["w_smooth"] = fmt(w_smooth);
  kv["w_consist"] = fmt(w_consist);
  kv["w_reproj"] = fmt(w_reproj);
  kv["pe_bands"] = std::to_string(pe_bands);
  kv["depth_c1"] = std::to_string(depth_c1);
  kv["depth_c2"] = std::to_string(depth_c2);
  kv["depth_c3"] = std::to_string(depth_c3);
  kv["feature_channels"] = std::to_string(feature_channels);
  kv["pose_channels"] = std::to_string(pose_channels);
  kv["decoder_channels"] = std::to_string(decoder_channels);
  kv["delta_mode"] = delta_mode;
  kv["deterministic"] = deterministic ? "true" : "false";
  kv["threads"] = std::to_string(threads);
  kv["checkpoint_every"] = std::to_string(checkpoint_every);
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

uint64_t TrainConfig::hash() const { return net::name_hash(canonical()); }

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "seed") c.seed = to_u64(key, value);
    else if (key == "num_planes") c.num_planes = to_int(key, value);
    else if (key == "depth_near") c.depth_near = to_double(key, value);
    else if (key == "depth_far") c.depth_far = to_double(key, value);
    else if (key == "batch_size") c.batch_size = to_int(key, value);
    else if (key == "epochs") c.epochs = to_int(key, value);
    else if (key == "lr") c.lr = to_double(key, value);
    else if (key == "lr_pose_mult") c.lr_pose_mult = to_double(key, value);
    else if (key == "depth_head_bias") c.depth_head_bias = to_double(key, value);
    else if (key == "density_head_bias") c.density_head_bias = to_double(key, value);
    else if (key == "lr_halve_epochs") c.lr_halve_epochs = to_int_list(key, value);
    else if (key == "w_l1") c.w_l1 = to_double(key, value);
    else if (key == "w_ssim") c.w_ssim = to_double(key, value);
    else if (key == "w_smooth") c.w_smooth = to_double(key, value);
    else if (key == "w_consist") c.w_consist = to_double(key, value);
    else if (key == "w_reproj") c.w_reproj = to_double(key, value);
    else if (key == "pe_bands") c.pe_bands = to_int(key, value);
    else if (key == "depth_c1") c.depth_c1 = to_int(key, value);
    else if (key == "depth_c2") c.depth_c2 = to_int(key, value);
    else if (key == "depth_c3") c.depth_c3 = to_int(key, value);
    else if (key == "feature_channels") c.feature_channels = to_int(key, value);
    else if (key == "pose_channels") c.pose_channels = to_int(key, value);
    else if (key == "decoder_channels") c.decoder_channels = to_int(key, value);
    else if (key == "delta_mode") c.delta_mode = value;
    else if (key == "deterministic") c.deterministic = to_bool(key, value);
    else if (key == "threads") c.threads = to_int(key, value);
    else if (key == "checkpoint_every") c.checkpoint_every = to_int(key, value);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_canonical(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("config: malformed canonical line '" + line + "'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return from_map(kv);
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                        ": expected key=value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config: " + path + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override '" + o + "' is not key=value");
    kv[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
  }
}

}  // namespace mpnerf::train
