#include "noisebalance/config.hpp"

#include <fstream>

namespace noisebalance {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::string& section,
                    std::initializer_list<const char*> known) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) {
            if (it.key() == k) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw ConfigError("unknown config key \"" + (section.empty() ? it.key() : section + "." + it.key()) + "\"");
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config key \"" + std::string(key) + "\": " + e.what());
    }
}

void read_string(const json& j, const char* key, std::string& out) { read<std::string>(j, key, out); }

} // namespace

NormVariant parse_norm_variant(const std::string& s) {
    if (s == "none") return NormVariant::none;
    if (s == "standard_bn") return NormVariant::standard_bn;
    if (s == "aux_bn") return NormVariant::aux_bn;
    if (s == "dar_bn") return NormVariant::dar_bn;
    throw ConfigError("unknown norm_variant \"" + s +
                      "\" (expected none|standard_bn|aux_bn|dar_bn)");
}

Precision parse_precision(const std::string& s) {
    if (s == "single") return Precision::single;
    if (s == "double") return Precision::dbl;
    throw ConfigError("unknown precision \"" + s + "\" (expected single|double)");
}

void RunConfig::validate() const {
    synth.validate();
    longtail.validate();
    train.validate();
    if (ablate.seeds < 1) throw ConfigError("ablate.seeds must be >= 1");
    if (ablate.variants.empty()) throw ConfigError("ablate.variants must be nonempty");
    if (sweep.seeds < 1) throw ConfigError("sweep.seeds must be >= 1");
    for (double s : sweep.sigmas) {
        if (s < 0) throw ConfigError("sweep.sigmas must be nonnegative");
    }
    if (probe.num_batches < 1) throw ConfigError("probe.num_batches must be >= 1");
    if (longtail.num_classes != synth.num_classes) {
        throw ConfigError("data.num_classes is shared by the synthetic and longtail specs");
    }
}

RunConfig parse_config(const json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    reject_unknown(j, "", {"data", "model", "train", "open", "ablate", "sweep", "probe"});
    RunConfig cfg;

    if (j.contains("data")) {
        const auto& d = j.at("data");
        reject_unknown(d, "data",
                       {"num_classes", "channels", "height", "width", "prototype_seed",
                        "within_class_std", "shift_range", "test_per_class", "n_max",
                        "imbalance_ratio"});
        read(d, "num_classes", cfg.synth.num_classes);
        read(d, "channels", cfg.synth.channels);
        read(d, "height", cfg.synth.height);
        read(d, "width", cfg.synth.width);
        read(d, "prototype_seed", cfg.synth.prototype_seed);
        read(d, "within_class_std", cfg.synth.within_class_std);
        read(d, "shift_range", cfg.synth.shift_range);
        read(d, "test_per_class", cfg.synth.test_per_class);
        read(d, "n_max", cfg.longtail.n_max);
        read(d, "imbalance_ratio", cfg.longtail.imbalance_ratio);
        cfg.longtail.num_classes = cfg.synth.num_classes;
    }

    if (j.contains("model")) {
        const auto& m = j.at("model");
        reject_unknown(m, "model",
                       {"input_dim", "hidden_dims", "num_classes", "norm_variant", "init_scale"});
        read(m, "input_dim", cfg.model.input_dim);
        read(m, "hidden_dims", cfg.model.hidden_dims);
        read(m, "num_classes", cfg.model.num_classes);
        std::string nv = norm_variant_name(cfg.model.norm_variant);
        read_string(m, "norm_variant", nv);
        cfg.model.norm_variant = parse_norm_variant(nv);
        read(m, "init_scale", cfg.model.init_scale);
    }

    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown(t, "train",
                       {"epochs", "defer_epoch", "lr", "momentum", "weight_decay", "lr_schedule",
                        "augment_flip", "master_seed", "precision"});
        read(t, "epochs", cfg.train.epochs);
        read(t, "defer_epoch", cfg.train.defer_epoch);
        read(t, "lr", cfg.train.optimizer.learning_rate);
        read(t, "momentum", cfg.train.optimizer.momentum);
        read(t, "weight_decay", cfg.train.optimizer.weight_decay);
        if (t.contains("lr_schedule")) {
            cfg.train.optimizer.lr_schedule.clear();
            for (const auto& entry : t.at("lr_schedule")) {
                if (!entry.is_array() || entry.size() != 2) {
                    throw ConfigError("train.lr_schedule entries must be [epoch, factor] pairs");
                }
                cfg.train.optimizer.lr_schedule.emplace_back(entry.at(0).get<int>(),
                                                             entry.at(1).get<double>());
            }
        }
        read(t, "augment_flip", cfg.train.augment_flip);
        read(t, "master_seed", cfg.train.master_seed);
        std::string prec = cfg.train.precision == Precision::dbl ? "double" : "single";
        read_string(t, "precision", prec);
        cfg.train.precision = parse_precision(prec);
    }

    if (j.contains("open")) {
        const auto& o = j.at("open");
        reject_unknown(o, "open",
                       {"delta", "mode", "fixed_noise_fraction", "batch_size", "noise_kind",
                        "additive_sigma"});
        read(o, "delta", cfg.train.open.delta);
        std::string mode = cfg.train.open.mode == OpenMode::fixed_ratio ? "fixed_ratio" : "longtail";
        read_string(o, "mode", mode);
        if (mode == "longtail") {
            cfg.train.open.mode = OpenMode::longtail;
        } else if (mode == "fixed_ratio") {
            cfg.train.open.mode = OpenMode::fixed_ratio;
        } else {
            throw ConfigError("unknown open.mode \"" + mode + "\" (expected longtail|fixed_ratio)");
        }
        read(o, "fixed_noise_fraction", cfg.train.open.fixed_noise_fraction);
        read(o, "batch_size", cfg.train.open.batch_size);
        std::string kind = cfg.train.open.noise_kind == NoiseKind::additive ? "additive" : "pure";
        read_string(o, "noise_kind", kind);
        if (kind == "pure") {
            cfg.train.open.noise_kind = NoiseKind::pure;
        } else if (kind == "additive") {
            cfg.train.open.noise_kind = NoiseKind::additive;
        } else {
            throw ConfigError("unknown open.noise_kind \"" + kind + "\" (expected pure|additive)");
        }
        read(o, "additive_sigma", cfg.train.open.additive_sigma);
    }

    if (j.contains("ablate")) {
        const auto& a = j.at("ablate");
        reject_unknown(a, "ablate", {"seeds", "variants"});
        read(a, "seeds", cfg.ablate.seeds);
        if (a.contains("variants")) {
            cfg.ablate.variants.clear();
            for (const auto& v : a.at("variants")) {
                cfg.ablate.variants.push_back(parse_norm_variant(v.get<std::string>()));
            }
        }
    }

    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        reject_unknown(s, "sweep", {"sigmas", "seeds"});
        read(s, "sigmas", cfg.sweep.sigmas);
        read(s, "seeds", cfg.sweep.seeds);
    }

    if (j.contains("probe")) {
        const auto& p = j.at("probe");
        reject_unknown(p, "probe", {"num_batches"});
        read(p, "num_batches", cfg.probe.num_batches);
    }

    cfg.validate();
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    return parse_config(j);
}

nlohmann::json resolved_json(const RunConfig& cfg) {
    json j;
    j["data"] = {{"num_classes", cfg.synth.num_classes},
                 {"channels", cfg.synth.channels},
                 {"height", cfg.synth.height},
                 {"width", cfg.synth.width},
                 {"prototype_seed", cfg.synth.prototype_seed},
                 {"within_class_std", cfg.synth.within_class_std},
                 {"shift_range", cfg.synth.shift_range},
                 {"test_per_class", cfg.synth.test_per_class},
                 {"n_max", cfg.longtail.n_max},
                 {"imbalance_ratio", cfg.longtail.imbalance_ratio}};
    j["model"] = {{"input_dim", cfg.model.input_dim},
                  {"hidden_dims", cfg.model.hidden_dims},
                  {"num_classes", cfg.model.num_classes},
                  {"norm_variant", norm_variant_name(cfg.model.norm_variant)},
                  {"init_scale", cfg.model.init_scale}};
    json sched = json::array();
    for (const auto& [e, f] : cfg.train.optimizer.lr_schedule) sched.push_back({e, f});
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"defer_epoch", cfg.train.resolved_defer()},
                  {"lr", cfg.train.optimizer.learning_rate},
                  {"momentum", cfg.train.optimizer.momentum},
                  {"weight_decay", cfg.train.optimizer.weight_decay},
                  {"lr_schedule", sched},
                  {"augment_flip", cfg.train.augment_flip},
                  {"master_seed", cfg.train.master_seed},
                  {"precision", cfg.train.precision == Precision::dbl ? "double" : "single"}};
    j["open"] = {{"delta", cfg.train.open.delta},
                 {"mode", cfg.train.open.mode == OpenMode::fixed_ratio ? "fixed_ratio" : "longtail"},
                 {"fixed_noise_fraction", cfg.train.open.fixed_noise_fraction},
                 {"batch_size", cfg.train.open.batch_size},
                 {"noise_kind",
                  cfg.train.open.noise_kind == NoiseKind::additive ? "additive" : "pure"},
                 {"additive_sigma", cfg.train.open.additive_sigma}};
    json variants = json::array();
    for (auto v : cfg.ablate.variants) variants.push_back(norm_variant_name(v));
    j["ablate"] = {{"seeds", cfg.ablate.seeds}, {"variants", variants}};
    j["sweep"] = {{"sigmas", cfg.sweep.sigmas}, {"seeds", cfg.sweep.seeds}};
    j["probe"] = {{"num_batches", cfg.probe.num_batches}};
    return j;
}

} // namespace noisebalance
