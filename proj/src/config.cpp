#include "nrsteg/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "nrsteg/error.hpp"

namespace nrsteg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ValidationError("config: bad value '" + v + "' for " + key);
  return out;
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k{
      "k",          "clip_seconds", "seed",          "segments_train", "segments_eval", "image_bits",
      "ss_redundancy", "ss_amplitude", "ss_bpp",     "fps_num",        "fps_den",       "lr",
      "rho",        "eps",          "weight_decay",  "epochs",         "batch_size",    "checkpoint_every",
      "threads"};
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto& d = dataset;
  auto& t = train;
  if (key == "k") d.k = parse_number<int>(key, value);
  else if (key == "clip_seconds") d.clip_seconds = parse_number<double>(key, value);
  else if (key == "seed") d.seed = t.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "segments_train") d.segments_train = parse_number<int>(key, value);
  else if (key == "segments_eval") d.segments_eval = parse_number<int>(key, value);
  else if (key == "image_bits") d.image_bits = parse_number<int>(key, value);
  else if (key == "ss_redundancy") d.ss_redundancy = parse_number<int>(key, value);
  else if (key == "ss_amplitude") d.ss_amplitude = parse_number<int>(key, value);
  else if (key == "ss_bpp") d.ss_bpp = parse_number<double>(key, value);
  else if (key == "fps_num") d.fps_num = parse_number<std::uint32_t>(key, value);
  else if (key == "fps_den") d.fps_den = parse_number<std::uint32_t>(key, value);
  else if (key == "lr") t.opt.lr = parse_number<double>(key, value);
  else if (key == "rho") t.opt.rho = parse_number<double>(key, value);
  else if (key == "eps") t.opt.eps = parse_number<double>(key, value);
  else if (key == "weight_decay") t.opt.weight_decay = parse_number<double>(key, value);
  else if (key == "epochs") t.epochs = parse_number<int>(key, value);
  else if (key == "batch_size") t.batch_size = parse_number<int>(key, value);
  else if (key == "checkpoint_every") t.checkpoint_every = parse_number<int>(key, value);
  else if (key == "threads") t.threads = parse_number<int>(key, value);
  else throw ValidationError("config: unknown key '" + key + "'");
}

void RunConfig::validate() const {
  dataset.validate();
  train.validate();
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError(origin + ":" + std::to_string(n) + ": expected key=value");
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ValidationError& e) {
      throw ValidationError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open config");
  std::ostringstream os;
  os << in.rdbuf();
  return parse(os.str(), path.string());
}

}  // namespace nrsteg
