#include "lgseg/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "lgseg/archive.hpp"  // fnv1a64

namespace lgseg {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

// One table drives parsing, serialization, and hashing.
struct Field {
  std::string name;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

std::string channels_to_str(const std::array<int, 4>& a) {
  std::ostringstream os;
  os << a[0] << "," << a[1] << "," << a[2] << "," << a[3];
  return os.str();
}

const std::vector<Field>& fields() {
  auto int_field = [](std::string name, int Config::*m) {
    return Field{name,
                 [m, name](Config& c, const std::string& v) {
                   try {
                     c.*m = std::stoi(v);
                   } catch (...) {
                     throw std::invalid_argument("config: bad integer for " + name);
                   }
                 },
                 [m](const Config& c) { return std::to_string(c.*m); }};
  };
  auto dbl_field = [](std::string name, double Config::*m) {
    return Field{name,
                 [m, name](Config& c, const std::string& v) {
                   try {
                     c.*m = std::stod(v);
                   } catch (...) {
                     throw std::invalid_argument("config: bad number for " + name);
                   }
                 },
                 [m](const Config& c) {
                   std::ostringstream os;
                   os.precision(17);
                   os << c.*m;
                   return os.str();
                 }};
  };
  auto str_field = [](std::string name, std::string Config::*m) {
    return Field{name,
                 [m](Config& c, const std::string& v) { c.*m = v; },
                 [m](const Config& c) { return c.*m; }};
  };
  auto bool_field = [](std::string name, bool Config::*m) {
    return Field{name,
                 [m, name](Config& c, const std::string& v) {
                   c.*m = parse_bool(v, name);
                 },
                 [m](const Config& c) { return c.*m ? "true" : "false"; }};
  };
  static const std::vector<Field> table = {
      int_field("image_size", &Config::image_size),
      int_field("t_max", &Config::t_max),
      Field{"vis_channels",
            [](Config& c, const std::string& v) {
              std::istringstream is(v);
              std::string part;
              for (int i = 0; i < 4; ++i) {
                if (!std::getline(is, part, ','))
                  throw std::invalid_argument("config: vis_channels needs 4 values");
                c.vis_channels[i] = std::stoi(trim(part));
              }
            },
            [](const Config& c) { return channels_to_str(c.vis_channels); }},
      int_field("vis_blocks", &Config::vis_blocks),
      int_field("vis_heads", &Config::vis_heads),
      int_field("vis_ffn_mult", &Config::vis_ffn_mult),
      int_field("text_layers", &Config::text_layers),
      int_field("c_l", &Config::c_l),
      int_field("text_ffn", &Config::text_ffn),
      int_field("text_heads", &Config::text_heads),
      int_field("c_decoder", &Config::c_decoder),
      int_field("decoder_ffn", &Config::decoder_ffn),
      int_field("decoder_heads", &Config::decoder_heads),
      int_field("n_decoder_layers", &Config::n_decoder_layers),
      int_field("c_o", &Config::c_o),
      int_field("gen_ffn", &Config::gen_ffn),
      int_field("integration_hidden", &Config::integration_hidden),
      int_field("vlba_heads", &Config::vlba_heads),
      str_field("mode", &Config::mode),
      int_field("num_queries", &Config::num_queries),
      str_field("l2va_query", &Config::l2va_query),
      str_field("fusion", &Config::fusion),
      bool_field("l2va", &Config::l2va),
      bool_field("v2la", &Config::v2la),
      str_field("gate_act", &Config::gate_act),
      bool_field("reuse_l", &Config::reuse_l),
      dbl_field("lr", &Config::lr),
      dbl_field("weight_decay", &Config::weight_decay),
      dbl_field("poly_power", &Config::poly_power),
      int_field("epochs", &Config::epochs),
      int_field("batch_size", &Config::batch_size),
      Field{"seed",
            [](Config& c, const std::string& v) { c.seed = std::stoull(v); },
            [](const Config& c) { return std::to_string(c.seed); }},
      int_field("threads", &Config::threads),
      int_field("train_size", &Config::train_size),
      int_field("val_size", &Config::val_size),
      int_field("test_size", &Config::test_size),
  };
  return table;
}

}  // namespace

void Config::validate() const {
  if (image_size <= 0 || image_size % 32 != 0)
    throw std::invalid_argument("config: image_size must be a positive multiple of 32");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (t_max < 1) throw std::invalid_argument("config: t_max must be >= 1");
  if (mode != "linguistic" && mode != "learnable")
    throw std::invalid_argument("config: mode must be linguistic or learnable");
  if (mode == "learnable" && num_queries < 1)
    throw std::invalid_argument("config: num_queries must be >= 1");
  if (l2va_query != "word" && l2va_query != "sentence")
    throw std::invalid_argument("config: l2va_query must be word or sentence");
  if (fusion != "vlba" && fusion != "unidirectional")
    throw std::invalid_argument("config: fusion must be vlba or unidirectional");
  if (gate_act != "linear" && gate_act != "tanh")
    throw std::invalid_argument("config: gate_act must be linear or tanh");
  if (n_decoder_layers < 0)
    throw std::invalid_argument("config: n_decoder_layers must be >= 0");
  if (epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
  if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
}

Config Config::from_text(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool found = false;
    for (const Field& f : fields()) {
      if (f.name == key) {
        f.set(cfg, value);
        found = true;
        break;
      }
    }
    if (!found)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": unknown key " + key);
  }
  return cfg;
}

Config Config::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return from_text(buf.str());
}

std::string Config::to_text() const {
  std::ostringstream os;
  for (const Field& f : fields()) os << f.name << " = " << f.get(*this) << "\n";
  return os.str();
}

uint64_t Config::hash() const {
  const std::string t = to_text();
  return fnv1a64(t.data(), t.size());
}

}  // namespace lgseg
