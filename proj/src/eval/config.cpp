#include "dcasr/eval/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "dcasr/error.hpp"

namespace dcasr::eval {

using nlohmann::json;

namespace {

template <typename E>
struct EnumNames;

template <>
struct EnumNames<DataSource> {
  static constexpr std::pair<DataSource, const char*> values[] = {
      {DataSource::simulator, "simulator"}, {DataSource::synthetic, "synthetic"}, {DataSource::click_log, "click_log"}};
};
template <>
struct EnumNames<data::TimestampFormat> {
  static constexpr std::pair<data::TimestampFormat, const char*> values[] = {{data::TimestampFormat::epoch, "epoch"},
                                                                             {data::TimestampFormat::iso8601, "iso8601"}};
};
template <>
struct EnumNames<sr::Variant> {
  static constexpr std::pair<sr::Variant, const char*> values[] = {{sr::Variant::plain, "plain"},
                                                                   {sr::Variant::normalized, "normalized"}};
};
template <>
struct EnumNames<scm::Candidate> {
  static constexpr std::pair<scm::Candidate, const char*> values[] = {{scm::Candidate::tanh, "tanh"},
                                                                      {scm::Candidate::linear, "linear"}};
};
template <>
struct EnumNames<augment::ConfounderMode> {
  static constexpr std::pair<augment::ConfounderMode, const char*> values[] = {
      {augment::ConfounderMode::per_session, "per_session"}, {augment::ConfounderMode::per_step, "per_step"}};
};
template <>
struct EnumNames<augment::SlateMode> {
  static constexpr std::pair<augment::SlateMode, const char*> values[] = {
      {augment::SlateMode::nearest_to_one_sample, "nearest"}, {augment::SlateMode::independent_samples, "independent"}};
};

template <typename E>
std::string enum_name(E v) {
  for (const auto& [e, name] : EnumNames<E>::values) {
    if (e == v) return name;
  }
  return "?";
}

// Reads keys from one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    const json& v = j_.at(key);
    if constexpr (std::is_enum_v<T>) {
      if (!v.is_string()) throw ConfigError(where(key) + " must be a string");
      const auto s = v.get<std::string>();
      std::string options;
      for (const auto& [e, name] : EnumNames<T>::values) {
        if (s == name) {
          out = e;
          return;
        }
        options += std::string(options.empty() ? "" : ", ") + name;
      }
      throw ConfigError(where(key) + ": unknown value '" + s + "' (expected one of " + options + ")");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where(key) + " must be a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw ConfigError(where(key) + " must be a non-negative integer");
      }
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where(key) + " must be a number");
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where(key) + " must be a string");
      out = v.get<std::string>();
    } else {
      if (!v.is_array() || v.size() != out.size()) {
        throw ConfigError(where(key) + " must be an array of " + std::to_string(out.size()) + " numbers");
      }
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (!v[i].is_number()) throw ConfigError(where(key) + " must hold numbers");
        out[i] = v[i].get<double>();
      }
    }
  }

  template <typename F>
  void child(const std::string& key, F&& f) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    Section s(j_.at(key), path_.empty() ? key : path_ + "." + key);
    f(s);
    s.finish();
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw ConfigError("unknown config key '" + (path_.empty() ? k : path_ + "." + k) + "'");
    }
  }

 private:
  std::string where(const std::string& key = "") const {
    std::string p = path_;
    if (!key.empty()) p = p.empty() ? key : p + "." + key;
    return "config " + (p.empty() ? std::string("root") : "'" + p + "'");
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("config: " + msg);
}

void validate(const ExperimentConfig& c) {
  const auto& d = c.data;
  require(d.source != DataSource::click_log || !d.click_log.empty(), "data.click_log is required for source click_log");
  require(d.min_length >= 2, "data.min_length must be >= 2");
  require(d.max_length == 0 || d.max_length >= d.min_length, "data.max_length must be 0 or >= data.min_length");
  require(d.slate_size >= 2, "data.slate_size must be >= 2");
  double total = 0.0;
  for (double f : d.split) {
    require(f > 0.0, "data.split fractions must be positive");
    total += f;
  }
  require(std::abs(total - 1.0) < 1e-9, "data.split must sum to 1");
  require(d.synthetic.n_sessions >= 3 && d.synthetic.n_items >= 2 && d.synthetic.n_topics >= 1,
          "data.synthetic needs n_sessions >= 3, n_items >= 2, n_topics >= 1");
  require(d.synthetic.min_length >= 2 && d.synthetic.max_length >= d.synthetic.min_length,
          "data.synthetic lengths must satisfy 2 <= min_length <= max_length");
  const auto& s = c.simulator;
  require(s.n_items >= 2 * s.slate_size, "simulator.n_items must be at least twice the slate size");
  require(s.slate_size >= 1 && s.session_length >= 1, "simulator.slate_size and session_length must be >= 1");
  require(s.train_ut1 >= 0.0 && s.train_ut1 <= 1.0 && s.eval_ut1 >= 0.0 && s.eval_ut1 <= 1.0,
          "simulator mixtures must lie in [0, 1]");
  require(s.log_sessions >= 1 && s.test_sessions >= 1 && s.eval_sessions >= 1, "simulator session counts must be >= 1");
  require(s.tau > 0.0, "simulator.tau must be positive");
  require(c.sr.dim >= 1 && c.sr.train.batch_size >= 1 && c.sr.train.lr > 0.0, "sr.dim, batch_size and lr must be positive");
  require(c.diffusion.dim >= 1 && c.diffusion.T >= 1 && c.diffusion.train.batch_size >= 1 && c.diffusion.train.lr > 0.0,
          "diffusion.dim, T, batch_size and lr must be positive");
  require(c.diffusion.beta_1 > 0.0 && c.diffusion.beta_1 <= c.diffusion.beta_T && c.diffusion.beta_T < 1.0,
          "diffusion betas must satisfy 0 < beta_1 <= beta_T < 1");
  require(c.diffusion.train.item_ce_weight >= 0.0, "diffusion.item_ce_weight must be >= 0");
  require(c.diffusion.train.p_uncond >= 0.0 && c.diffusion.train.p_uncond <= 1.0, "diffusion.p_uncond must lie in [0, 1]");
  require(c.scm.dim >= 1 && c.scm.train.batch_size >= 1 && c.scm.train.lr > 0.0, "scm.dim, batch_size and lr must be positive");
  require(c.augment.n_multiplier > 0.0, "augment.n_multiplier must be positive");
  require(c.augment.guidance >= 0.0, "augment.guidance must be >= 0");
  require(c.augment.min_length >= 2, "augment.min_length must be >= 2");
  require(c.eval.k >= 1, "eval.k must be >= 1");
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  root.read("seed", c.seed);
  root.read("out", c.out);
  root.child("data", [&](Section& s) {
    s.read("source", c.data.source);
    s.read("click_log", c.data.click_log);
    s.read("timestamp_format", c.data.timestamp_format);
    s.read("top_m", c.data.top_m);
    s.read("min_length", c.data.min_length);
    s.read("max_length", c.data.max_length);
    s.read("split", c.data.split);
    s.read("slate_size", c.data.slate_size);
    s.child("synthetic", [&](Section& y) {
      auto& g = c.data.synthetic;
      y.read("n_sessions", g.n_sessions);
      y.read("n_items", g.n_items);
      y.read("n_topics", g.n_topics);
      y.read("zipf_exponent", g.zipf_exponent);
      y.read("min_length", g.min_length);
      y.read("max_length", g.max_length);
      y.read("off_topic_rate", g.off_topic_rate);
    });
  });
  root.child("simulator", [&](Section& s) {
    auto& m = c.simulator;
    s.read("n_items", m.n_items);
    s.read("train_ut1", m.train_ut1);
    s.read("eval_ut1", m.eval_ut1);
    s.read("log_sessions", m.log_sessions);
    s.read("test_sessions", m.test_sessions);
    s.read("eval_sessions", m.eval_sessions);
    s.read("session_length", m.session_length);
    s.read("slate_size", m.slate_size);
    s.read("mu_high", m.mu_high);
    s.read("mu_low", m.mu_low);
    s.read("item_noise", m.item_noise);
    s.read("user_noise", m.user_noise);
    s.read("tau", m.tau);
    s.read("u0", m.u0);
  });
  root.child("sr", [&](Section& s) {
    s.read("dim", c.sr.dim);
    s.read("variant", c.sr.variant);
    s.read("scale", c.sr.scale);
    s.read("batch_size", c.sr.train.batch_size);
    s.read("lr", c.sr.train.lr);
    s.read("max_epochs", c.sr.train.max_epochs);
    s.read("patience", c.sr.train.patience);
  });
  root.child("diffusion", [&](Section& s) {
    s.read("dim", c.diffusion.dim);
    s.read("T", c.diffusion.T);
    s.read("beta_1", c.diffusion.beta_1);
    s.read("beta_T", c.diffusion.beta_T);
    s.read("max_len", c.diffusion.max_len);
    s.read("epochs", c.diffusion.train.epochs);
    s.read("batch_size", c.diffusion.train.batch_size);
    s.read("lr", c.diffusion.train.lr);
    s.read("p_uncond", c.diffusion.train.p_uncond);
    s.read("item_ce_weight", c.diffusion.train.item_ce_weight);
  });
  root.child("scm", [&](Section& s) {
    s.read("dim", c.scm.dim);
    s.read("candidate", c.scm.candidate);
    s.read("epochs", c.scm.train.epochs);
    s.read("batch_size", c.scm.train.batch_size);
    s.read("lr", c.scm.train.lr);
  });
  root.child("augment", [&](Section& s) {
    s.read("n_multiplier", c.augment.n_multiplier);
    s.read("guidance", c.augment.guidance);
    s.read("min_length", c.augment.min_length);
    s.read("confounder", c.augment.confounder);
    s.read("slate_mode", c.augment.slate_mode);
  });
  root.child("eval", [&](Section& s) {
    s.read("k", c.eval.k);
    s.read("diffusion_recommender", c.eval.diffusion_recommender);
  });
  root.finish();
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
  const auto& g = c.data.synthetic;
  const auto& m = c.simulator;
  return {
      {"seed", c.seed},
      {"out", c.out},
      {"data",
       {{"source", enum_name(c.data.source)},
        {"click_log", c.data.click_log},
        {"timestamp_format", enum_name(c.data.timestamp_format)},
        {"top_m", c.data.top_m},
        {"min_length", c.data.min_length},
        {"max_length", c.data.max_length},
        {"split", c.data.split},
        {"slate_size", c.data.slate_size},
        {"synthetic",
         {{"n_sessions", g.n_sessions},
          {"n_items", g.n_items},
          {"n_topics", g.n_topics},
          {"zipf_exponent", g.zipf_exponent},
          {"min_length", g.min_length},
          {"max_length", g.max_length},
          {"off_topic_rate", g.off_topic_rate}}}}},
      {"simulator",
       {{"n_items", m.n_items},
        {"train_ut1", m.train_ut1},
        {"eval_ut1", m.eval_ut1},
        {"log_sessions", m.log_sessions},
        {"test_sessions", m.test_sessions},
        {"eval_sessions", m.eval_sessions},
        {"session_length", m.session_length},
        {"slate_size", m.slate_size},
        {"mu_high", m.mu_high},
        {"mu_low", m.mu_low},
        {"item_noise", m.item_noise},
        {"user_noise", m.user_noise},
        {"tau", m.tau},
        {"u0", m.u0}}},
      {"sr",
       {{"dim", c.sr.dim},
        {"variant", enum_name(c.sr.variant)},
        {"scale", c.sr.scale},
        {"batch_size", c.sr.train.batch_size},
        {"lr", c.sr.train.lr},
        {"max_epochs", c.sr.train.max_epochs},
        {"patience", c.sr.train.patience}}},
      {"diffusion",
       {{"dim", c.diffusion.dim},
        {"T", c.diffusion.T},
        {"beta_1", c.diffusion.beta_1},
        {"beta_T", c.diffusion.beta_T},
        {"max_len", c.diffusion.max_len},
        {"epochs", c.diffusion.train.epochs},
        {"batch_size", c.diffusion.train.batch_size},
        {"lr", c.diffusion.train.lr},
        {"p_uncond", c.diffusion.train.p_uncond},
        {"item_ce_weight", c.diffusion.train.item_ce_weight}}},
      {"scm",
       {{"dim", c.scm.dim},
        {"candidate", enum_name(c.scm.candidate)},
        {"epochs", c.scm.train.epochs},
        {"batch_size", c.scm.train.batch_size},
        {"lr", c.scm.train.lr}}},
      {"augment",
       {{"n_multiplier", c.augment.n_multiplier},
        {"guidance", c.augment.guidance},
        {"min_length", c.augment.min_length},
        {"confounder", enum_name(c.augment.confounder)},
        {"slate_mode", enum_name(c.augment.slate_mode)}}},
      {"eval", {{"k", c.eval.k}, {"diffusion_recommender", c.eval.diffusion_recommender}}},
  };
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fingerprint(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("out");
  return fnv1a64(j.dump());
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

}  // namespace dcasr::eval
