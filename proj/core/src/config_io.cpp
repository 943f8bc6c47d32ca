#include "adt/config_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace adt {

namespace {

std::string parts_name(det::LossParts p) {
  switch (p) {
    case det::LossParts::cls_only:
      return "cls";
    case det::LossParts::reg_only:
      return "reg";
    default:
      return "both";
  }
}

det::LossParts parts_from_name(const std::string& s) {
  if (s == "cls") return det::LossParts::cls_only;
  if (s == "reg") return det::LossParts::reg_only;
  if (s == "both") return det::LossParts::both;
  throw ConfigError("config: attack.parts must be cls, reg or both");
}

void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& known,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

}  // namespace

std::string settings_to_json(const RunSettings& s) {
  nlohmann::json t;
  t["beta"] = s.train.beta;
  t["delta"] = s.train.delta;
  t["lambda_s"] = s.train.lambda_s;
  t["lambda_t"] = s.train.lambda_t;
  t["lr"] = s.train.lr;
  t["momentum"] = s.train.momentum;
  t["grad_clip"] = s.train.grad_clip;
  t["label_smoothing"] = s.train.label_smoothing;
  t["r_in_min"] = s.train.r_in_min;
  t["r_in_max"] = s.train.r_in_max;
  t["r_out_min"] = s.train.r_out_min;
  t["r_out_max"] = s.train.r_out_max;
  t["s_min"] = s.train.s_min;
  t["t_max_iteration"] = s.train.t_max_iteration;
  t["burn_in"] = s.train.burn_in;
  t["batch_size"] = s.train.batch_size;
  t["eval_every"] = s.train.eval_every;
  t["checkpoint_every"] = s.train.checkpoint_every;
  t["teacher_score_thresh"] = s.train.teacher_score_thresh;
  t["nms_thresh"] = s.train.nms_thresh;
  t["seed"] = s.train.seed;

  nlohmann::json a;
  a["alpha"] = s.attack.alpha;
  a["epsilon"] = s.attack.epsilon;
  a["t_max_attack"] = s.attack.t_max_attack;
  a["p_attack"] = s.attack.p_attack;
  a["parts"] = parts_name(s.attack.parts);

  nlohmann::json root;
  root["train"] = t;
  root["attack"] = a;
  return root.dump(2);
}

RunSettings settings_from_json(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  reject_unknown(root, {"train", "attack"}, "top level");

  RunSettings s;
  try {
    if (root.contains("train")) {
      const nlohmann::json& t = root["train"];
      reject_unknown(t,
                     {"beta", "delta", "lambda_s", "lambda_t", "lr", "momentum", "grad_clip",
                      "label_smoothing", "r_in_min",
                      "r_in_max", "r_out_min", "r_out_max", "s_min", "t_max_iteration", "burn_in",
                      "batch_size", "eval_every", "checkpoint_every", "teacher_score_thresh",
                      "nms_thresh", "seed"},
                     "train");
      auto get = [&t](const char* k, auto& field) {
        if (t.contains(k)) field = t.at(k).get<std::decay_t<decltype(field)>>();
      };
      get("beta", s.train.beta);
      get("delta", s.train.delta);
      get("lambda_s", s.train.lambda_s);
      get("lambda_t", s.train.lambda_t);
      get("lr", s.train.lr);
      get("momentum", s.train.momentum);
      get("grad_clip", s.train.grad_clip);
      get("label_smoothing", s.train.label_smoothing);
      get("r_in_min", s.train.r_in_min);
      get("r_in_max", s.train.r_in_max);
      get("r_out_min", s.train.r_out_min);
      get("r_out_max", s.train.r_out_max);
      get("s_min", s.train.s_min);
      get("t_max_iteration", s.train.t_max_iteration);
      get("burn_in", s.train.burn_in);
      get("batch_size", s.train.batch_size);
      get("eval_every", s.train.eval_every);
      get("checkpoint_every", s.train.checkpoint_every);
      get("teacher_score_thresh", s.train.teacher_score_thresh);
      get("nms_thresh", s.train.nms_thresh);
      get("seed", s.train.seed);
    }
    if (root.contains("attack")) {
      const nlohmann::json& a = root["attack"];
      reject_unknown(a, {"alpha", "epsilon", "t_max_attack", "p_attack", "parts"}, "attack");
      if (a.contains("alpha")) s.attack.alpha = a.at("alpha").get<double>();
      if (a.contains("epsilon")) s.attack.epsilon = a.at("epsilon").get<double>();
      if (a.contains("t_max_attack")) s.attack.t_max_attack = a.at("t_max_attack").get<int>();
      if (a.contains("p_attack")) s.attack.p_attack = a.at("p_attack").get<double>();
      if (a.contains("parts")) s.attack.parts = parts_from_name(a.at("parts").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: bad value: ") + e.what());
  }
  try {
    s.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

RunSettings load_settings(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return settings_from_json(ss.str());
}

void save_settings(const std::string& path, const RunSettings& s) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_settings: cannot open " + path);
  f << settings_to_json(s) << "\n";
}

}  // namespace adt
