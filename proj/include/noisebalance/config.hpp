#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "noisebalance/dataset.hpp"
#include "noisebalance/model.hpp"
#include "noisebalance/train.hpp"

namespace noisebalance {

struct AblateConfig {
    int seeds = 5;
    std::vector<NormVariant> variants = {NormVariant::standard_bn, NormVariant::aux_bn,
                                         NormVariant::dar_bn};
};

struct SweepConfig {
    std::vector<double> sigmas = {0.0, 0.25, 0.5, 0.75, 1.0};
    int seeds = 5;
};

struct ProbeConfig {
    int num_batches = 100;
};

// The full experiment configuration. A default-constructed RunConfig is valid
// and runnable; every key has a documented default (see README).
struct RunConfig {
    SyntheticSpec synth;
    LongTailSpec longtail;
    ModelConfig model;
    TrainConfig train;
    AblateConfig ablate;
    SweepConfig sweep;
    ProbeConfig probe;

    void validate() const;
};

NormVariant parse_norm_variant(const std::string& s);
Precision parse_precision(const std::string& s);

// Parse a JSON config, applying values over the defaults. Unknown keys are
// rejected at every level.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config_file(const std::string& path);

// The fully-resolved key tree (defaults applied), echoed into output
// directories for auditability.
nlohmann::json resolved_json(const RunConfig& cfg);

} // namespace noisebalance
