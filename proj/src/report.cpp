#include "noisebalance/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "noisebalance/error.hpp"

namespace noisebalance {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string metrics_csv(const Metrics& m) {
    std::string out = "epoch,lr,train_loss,noise_fraction\n";
    for (const auto& e : m.epochs) {
        out += std::to_string(e.epoch);
        out += ',';
        out += format_double(e.lr);
        out += ',';
        out += format_double(e.train_loss);
        out += ',';
        out += format_double(e.noise_fraction);
        out += '\n';
    }
    return out;
}

nlohmann::json metrics_json(const Metrics& m) {
    nlohmann::json j;
    j["overall_accuracy"] = m.overall_accuracy;
    nlohmann::json per_class = nlohmann::json::array();
    for (double a : m.per_class_accuracy) {
        if (std::isnan(a)) {
            per_class.push_back(nullptr);
        } else {
            per_class.push_back(a);
        }
    }
    j["per_class_accuracy"] = per_class;
    nlohmann::json groups = nlohmann::json::array();
    for (double a : m.group_accuracy) {
        if (std::isnan(a)) {
            groups.push_back(nullptr);
        } else {
            groups.push_back(a);
        }
    }
    j["group_accuracy"] = groups;
    nlohmann::json confusion = nlohmann::json::array();
    for (std::int64_t t = 0; t < m.num_classes; ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (std::int64_t p = 0; p < m.num_classes; ++p) row.push_back(m.confusion_at(t, p));
        confusion.push_back(row);
    }
    j["confusion_matrix"] = confusion;
    return j;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw FormatError("short write to " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace noisebalance
