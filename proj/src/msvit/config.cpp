// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include "msvit/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "msvit/errors.hpp"

namespace msvit {

using nlohmann::ordered_json;

GateMode GateMode::parse(const std::string& s) {
    GateMode m;
    if (s == "learned") m.kind = learned;
    else if (s == "all-fine") m.kind = all_fine;
    else if (s == "all-coarse") m.kind = all_coarse;
    else if (s == "none") m.kind = none;
    else if (s.rfind("radial:", 0) == 0) {
        m.kind = radial;
        try {
            std::size_t used = 0;
            m.radius = std::stod(s.substr(7), &used);
            if (used != s.size() - 7) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ConfigError("train.gate_mode: bad radius in '" + s + "'");
        }
        if (!(m.radius >= 0.0)) throw ConfigError("train.gate_mode: radius must be >= 0");
    } else {
        throw ConfigError("train.gate_mode: unknown mode '" + s +
                          "' (learned, all-fine, all-coarse, radial:R, none)");
    }
    return m;
}

std::string GateMode::str() const {
    switch (kind) {
        case learned: return "learned";
        case all_fine: return "all-fine";
        case all_coarse: return "all-coarse";
        case none: return "none";
        case radial: {
            std::ostringstream os;
            os << "radial:" << radius;
            return os.str();
        }
    }
    return "learned";
}

const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adamw"; }
const char* schedule_name(ScheduleKind k) { return k == ScheduleKind::cosine ? "cosine" : "constant"; }

void TrainConfig::validate() const {
    if (epochs == 0) throw ConfigError("train.epochs must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2 must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
    if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip must be >= 0");
    if (!(warmup_epochs >= 0.0) || warmup_epochs > static_cast<double>(epochs))
        throw ConfigError("train.warmup_epochs must be in [0, train.epochs]");
    if (!(gate_warmup_epochs >= 0.0) || gate_warmup_epochs > static_cast<double>(epochs))
        throw ConfigError("train.gate_warmup_epochs must be in [0, train.epochs]");
}

void DataConfig::validate() const {
    if (!(texture_amplitude > 0.0 && texture_amplitude <= 0.5))
        throw ConfigError("data.texture_amplitude must be in (0, 0.5]");
    if (!(texture_noise >= 0.0)) throw ConfigError("data.texture_noise must be >= 0");
    if (!(texture_freq_min > 0.0 && texture_freq_min <= texture_freq_max && texture_freq_max <= 0.5))
        throw ConfigError("data.texture_freq_min/max must satisfy 0 < min <= max <= 0.5");
    if (source == "synthetic") {
        if (n_train == 0) throw ConfigError("data.n_train must be positive");
    } else if (source == "manifest") {
        if (train_manifest.empty()) throw ConfigError("data.train_manifest is required for source=manifest");
    } else {
        throw ConfigError("data.source: unknown value '" + source + "' (synthetic, manifest)");
    }
}

void ModelConfig::validate() const {
    scale.validate();
    backbone.validate();
    gate.validate();
    loss.validate();
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    data.validate();
    if (sweep.g_star.empty() || sweep.lambda.empty()) throw ConfigError("sweep grids must be nonempty");
    for (double g : sweep.g_star)
        if (!(g > 0.0 && g < 1.0)) throw ConfigError("sweep.g_star values must be in (0, 1)");
    for (double l : sweep.lambda)
        if (!(l >= 0.0)) throw ConfigError("sweep.lambda values must be >= 0");
    if (run_name.empty()) throw ConfigError("run_name must be nonempty");
}

namespace {

ordered_json to_tree(const RunConfig& c) {
    const auto& m = c.model;
    ordered_json j;
    j["run_name"] = c.run_name;
    j["scale"] = {{"image_size", m.scale.image_size},
                  {"fine_scale", m.scale.fine_scale},
                  {"coarse_scale", m.scale.coarse_scale},
                  {"channels", m.scale.channels}};
    j["backbone"] = {{"depth", m.backbone.depth},
                     {"width", m.backbone.width},
                     {"heads", m.backbone.heads},
                     {"mlp_ratio", m.backbone.mlp_ratio},
                     {"num_classes", m.backbone.num_classes}};
    j["gate"] = {{"hidden", m.gate.hidden},
                 {"temperature", m.gate.temperature},
                 {"bias_init", m.gate.bias_init}};
    j["loss"] = {{"kind", gate_loss_name(m.loss.kind)},
                 {"g_star", m.loss.g_star},
                 {"lambda", m.loss.lambda},
                 {"prior_temperature", m.loss.prior_temperature},
                 {"hyperprior_variance", m.loss.hyperprior_variance},
                 {"prior_init", m.loss.prior_init == PriorInit::ctr ? "ctr" : "constant"}};
    const auto& t = c.train;
    j["train"] = {{"epochs", t.epochs},
                  {"batch_size", t.batch_size},
                  {"optimizer", optimizer_name(t.optimizer)},
                  {"lr", t.lr},
                  {"momentum", t.momentum},
                  {"beta2", t.beta2},
                  {"weight_decay", t.weight_decay},
                  {"grad_clip", t.grad_clip},
                  {"warmup_epochs", t.warmup_epochs},
                  {"gate_warmup_epochs", t.gate_warmup_epochs},
                  {"schedule", schedule_name(t.schedule)},
                  {"seed", t.seed},
                  {"trimming", t.trimming},
                  {"gate_mode", t.gate_mode.str()}};
    j["data"] = {{"source", c.data.source},
                 {"n_train", c.data.n_train},
                 {"n_eval", c.data.n_eval},
                 {"seed", c.data.seed},
                 {"train_manifest", c.data.train_manifest},
                 {"eval_manifest", c.data.eval_manifest},
                 {"texture_amplitude", c.data.texture_amplitude},
                 {"texture_noise", c.data.texture_noise},
                 {"texture_freq_min", c.data.texture_freq_min},
                 {"texture_freq_max", c.data.texture_freq_max}};
    j["sweep"] = {{"g_star", c.sweep.g_star}, {"lambda", c.sweep.lambda}};
    return j;
}

bool same_kind(const ordered_json& def, const ordered_json& v) {
    if (def.is_number()) return v.is_number();
    if (def.is_boolean()) return v.is_boolean();
    if (def.is_string()) return v.is_string();
    if (def.is_array()) return v.is_array();
    if (def.is_object()) return v.is_object();
    return false;
}

const char* kind_name(const ordered_json& def) {
    if (def.is_number()) return "a number";
    if (def.is_boolean()) return "a boolean";
    if (def.is_string()) return "a string";
    if (def.is_array()) return "an array";
    return "an object";
}

void merge(ordered_json& base, const ordered_json& user, const std::string& prefix) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
        ordered_json& slot = base[it.key()];
        if (!same_kind(slot, it.value()))
            throw ConfigError("config key '" + key + "' must be " + kind_name(slot));
        if (slot.is_object()) merge(slot, it.value(), key);
        else slot = it.value();
    }
}

template <class T>
T get(const ordered_json& j, const char* section, const char* key) {
    const ordered_json& v = section ? j.at(section).at(key) : j.at(key);
    const std::string path = section ? std::string(section) + "." + key : key;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_unsigned()) {
            throw ConfigError("config key '" + path + "' must be a non-negative integer");
        }
    }
    try {
        return v.get<T>();
    } catch (const ordered_json::exception&) {
        throw ConfigError("config key '" + path + "' has the wrong type");
    }
}

RunConfig from_tree(const ordered_json& j) {
    RunConfig c;
    c.run_name = get<std::string>(j, nullptr, "run_name");
    auto& m = c.model;
    m.scale.image_size = get<std::size_t>(j, "scale", "image_size");
    m.scale.fine_scale = get<std::size_t>(j, "scale", "fine_scale");
    m.scale.coarse_scale = get<std::size_t>(j, "scale", "coarse_scale");
    m.scale.channels = get<std::size_t>(j, "scale", "channels");
    m.backbone.depth = get<std::size_t>(j, "backbone", "depth");
    m.backbone.width = get<std::size_t>(j, "backbone", "width");
    m.backbone.heads = get<std::size_t>(j, "backbone", "heads");
    m.backbone.mlp_ratio = get<std::size_t>(j, "backbone", "mlp_ratio");
    m.backbone.num_classes = get<std::size_t>(j, "backbone", "num_classes");
    m.gate.hidden = get<std::size_t>(j, "gate", "hidden");
    m.gate.temperature = get<double>(j, "gate", "temperature");
    m.gate.bias_init = get<double>(j, "gate", "bias_init");
    try {
        m.loss.kind = parse_gate_loss(get<std::string>(j, "loss", "kind"));
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("loss.kind: ") + e.what());
    }
    m.loss.g_star = get<double>(j, "loss", "g_star");
    m.loss.lambda = get<double>(j, "loss", "lambda");
    m.loss.prior_temperature = get<double>(j, "loss", "prior_temperature");
    m.loss.hyperprior_variance = get<double>(j, "loss", "hyperprior_variance");
    const auto init = get<std::string>(j, "loss", "prior_init");
    if (init == "ctr") m.loss.prior_init = PriorInit::ctr;
    else if (init == "constant") m.loss.prior_init = PriorInit::constant;
    else throw ConfigError("loss.prior_init: unknown value '" + init + "' (ctr, constant)");

    auto& t = c.train;
    t.epochs = get<std::size_t>(j, "train", "epochs");
    t.batch_size = get<std::size_t>(j, "train", "batch_size");
    const auto opt = get<std::string>(j, "train", "optimizer");
    if (opt == "sgd") t.optimizer = OptimizerKind::sgd;
    else if (opt == "adamw") t.optimizer = OptimizerKind::adamw;
    else throw ConfigError("train.optimizer: unknown value '" + opt + "' (sgd, adamw)");
    t.lr = get<double>(j, "train", "lr");
    t.momentum = get<double>(j, "train", "momentum");
    t.beta2 = get<double>(j, "train", "beta2");
    t.weight_decay = get<double>(j, "train", "weight_decay");
    t.grad_clip = get<double>(j, "train", "grad_clip");
    t.warmup_epochs = get<double>(j, "train", "warmup_epochs");
    t.gate_warmup_epochs = get<double>(j, "train", "gate_warmup_epochs");
    const auto sched = get<std::string>(j, "train", "schedule");
    if (sched == "cosine") t.schedule = ScheduleKind::cosine;
    else if (sched == "constant") t.schedule = ScheduleKind::constant;
    else throw ConfigError("train.schedule: unknown value '" + sched + "' (cosine, constant)");
    t.seed = get<std::uint64_t>(j, "train", "seed");
    t.trimming = get<bool>(j, "train", "trimming");
    t.gate_mode = GateMode::parse(get<std::string>(j, "train", "gate_mode"));

    c.data.source = get<std::string>(j, "data", "source");
    c.data.n_train = get<std::size_t>(j, "data", "n_train");
    c.data.n_eval = get<std::size_t>(j, "data", "n_eval");
    c.data.seed = get<std::uint64_t>(j, "data", "seed");
    c.data.train_manifest = get<std::string>(j, "data", "train_manifest");
    c.data.eval_manifest = get<std::string>(j, "data", "eval_manifest");
    c.data.texture_amplitude = get<double>(j, "data", "texture_amplitude");
    c.data.texture_noise = get<double>(j, "data", "texture_noise");
    c.data.texture_freq_min = get<double>(j, "data", "texture_freq_min");
    c.data.texture_freq_max = get<double>(j, "data", "texture_freq_max");
    c.sweep.g_star = get<std::vector<double>>(j, "sweep", "g_star");
    c.sweep.lambda = get<std::vector<double>>(j, "sweep", "lambda");
    return c;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    ordered_json user;
    try {
        user = ordered_json::parse(json_text);
    } catch (const ordered_json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!user.is_object()) throw ConfigError("config must be a JSON object");
    ordered_json tree = to_tree(RunConfig{});
    merge(tree, user, "");
    RunConfig cfg = from_tree(tree);
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& cfg, int indent) {
    return to_tree(cfg).dump(indent);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "' must look like section.key=value");
    const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    ordered_json value;
    try {
        value = ordered_json::parse(text);
    } catch (const ordered_json::parse_error&) {
        value = text;
    }
    ordered_json user = ordered_json::object();
    const auto dot = path.find('.');
    if (dot == std::string::npos) user[path] = value;
    else user[path.substr(0, dot)][path.substr(dot + 1)] = value;

    ordered_json tree = to_tree(cfg);
    merge(tree, user, "");
    cfg = from_tree(tree);
}

}  // namespace msvit
