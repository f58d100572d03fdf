#include "man/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "man/io_util.hpp"

namespace man {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int parse_int(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const auto out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

std::vector<std::uint64_t> parse_u64_list(const std::string& v, const std::string& key) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_u64(item, key));
  }
  if (out.empty()) throw ConfigError("config: key '" + key + "' expects a comma-separated list");
  return out;
}

}  // namespace

ModelConfig ExperimentConfig::resolved_model() const {
  ModelConfig m = model;
  apply_ordering_preset(m, ordering);
  m.vocab = task.vocab;
  m.validate();
  return m;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: " + origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty())
      throw ConfigError("config: " + origin + ":" + std::to_string(lineno) + ": empty value for '" + key + "'");

    if (key == "seed") cfg.seed = parse_u64(value, key);
    else if (key == "seeds") cfg.seeds = parse_u64_list(value, key);
    else if (key == "output_dir") cfg.output_dir = value;
    else if (key == "ordering") cfg.ordering = value;
    else if (key == "task") cfg.task.kind = task_kind_from(value);
    else if (key == "task.vocab") cfg.task.vocab = parse_int(value, key);
    else if (key == "task.min_len") cfg.task.min_len = parse_int(value, key);
    else if (key == "task.max_len") cfg.task.max_len = parse_int(value, key);
    else if (key == "task.window") cfg.task.window = parse_int(value, key);
    else if (key == "model.dim") cfg.model.dim = parse_int(value, key);
    else if (key == "model.heads") cfg.model.heads = parse_int(value, key);
    else if (key == "model.enc_layers") cfg.model.enc_layers = parse_int(value, key);
    else if (key == "model.dec_layers") cfg.model.dec_layers = parse_int(value, key);
    else if (key == "model.band") cfg.model.band = parse_int(value, key);
    else if (key == "model.band_from_length") cfg.model.band_from_length = parse_bool(value, key);
    else if (key == "model.clip_radius") cfg.model.clip_radius = parse_int(value, key);
    else if (key == "model.ffn_mult") cfg.model.ffn_mult = parse_int(value, key);
    else if (key == "model.dropout") cfg.model.dropout = parse_double(value, key);
    else if (key == "model.max_len") cfg.model.max_len = parse_int(value, key);
    else if (key == "train.steps") cfg.train.steps = parse_int(value, key);
    else if (key == "train.batch") cfg.train.batch = parse_int(value, key);
    else if (key == "train.warmup") cfg.train.warmup = parse_int(value, key);
    else if (key == "train.peak_lr") cfg.train.peak_lr = parse_double(value, key);
    else if (key == "train.smoothing") cfg.train.smoothing = parse_double(value, key);
    else if (key == "train.clip_norm") cfg.train.clip_norm = parse_double(value, key);
    else if (key == "train.eval_every") cfg.train.eval_every = parse_int(value, key);
    else if (key == "train.eval_size") cfg.train.eval_size = parse_int(value, key);
    else if (key == "train.early_stop_acc") cfg.train.early_stop_acc = parse_double(value, key);
    else
      throw ConfigError("config: " + origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
  }

  cfg.train.seed = cfg.seed;
  try {
    cfg.task.validate();
    cfg.resolved_model();  // validates ordering name and model fields
    cfg.train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream out;
  out << "seed = " << seed << '\n';
  out << "seeds = ";
  for (std::size_t i = 0; i < seeds.size(); ++i) out << (i ? "," : "") << seeds[i];
  out << '\n';
  out << "output_dir = " << output_dir << '\n';
  out << "ordering = " << ordering << '\n';
  out << "task = " << task_kind_name(task.kind) << '\n';
  out << "task.vocab = " << task.vocab << '\n';
  out << "task.min_len = " << task.min_len << '\n';
  out << "task.max_len = " << task.max_len << '\n';
  out << "task.window = " << task.window << '\n';
  out << "model.dim = " << model.dim << '\n';
  out << "model.heads = " << model.heads << '\n';
  out << "model.enc_layers = " << model.enc_layers << '\n';
  out << "model.dec_layers = " << model.dec_layers << '\n';
  out << "model.band = " << model.band << '\n';
  out << "model.band_from_length = " << (model.band_from_length ? "true" : "false") << '\n';
  out << "model.clip_radius = " << model.clip_radius << '\n';
  out << "model.ffn_mult = " << model.ffn_mult << '\n';
  out << "model.dropout = " << format_double(model.dropout) << '\n';
  out << "model.max_len = " << model.max_len << '\n';
  out << "train.steps = " << train.steps << '\n';
  out << "train.batch = " << train.batch << '\n';
  out << "train.warmup = " << train.warmup << '\n';
  out << "train.peak_lr = " << format_double(train.peak_lr) << '\n';
  out << "train.smoothing = " << format_double(train.smoothing) << '\n';
  out << "train.clip_norm = " << format_double(train.clip_norm) << '\n';
  out << "train.eval_every = " << train.eval_every << '\n';
  out << "train.eval_size = " << train.eval_size << '\n';
  out << "train.early_stop_acc = " << format_double(train.early_stop_acc) << '\n';
  return out.str();
}

void ExperimentConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_text();
}

}  // namespace man
