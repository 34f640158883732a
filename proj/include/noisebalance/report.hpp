#pragma once

#include <string>

#include <json.hpp>

#include "noisebalance/metrics.hpp"

namespace noisebalance {

// Locale-independent shortest round-trip decimal form.
std::string format_double(double v);

// Fixed schema: epoch,lr,train_loss,noise_fraction (header always present).
std::string metrics_csv(const Metrics& m);

// Accuracy block for final.json; NaN entries serialize as null.
nlohmann::json metrics_json(const Metrics& m);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

} // namespace noisebalance
