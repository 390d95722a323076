#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace terngrad {

constexpr const char* kArtifactVersion = "1.0.0";

// Minimal RFC-4180 writer. The first line is a provenance comment carrying
// the config hash so any output can be traced back to its exact inputs.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& config_hash_hex)
        : out_(path) {
        if (!out_) throw std::runtime_error("cannot open output " + path);
        out_ << "# config_hash=" << config_hash_hex << " version=" << kArtifactVersion
             << "\r\n";
    }

    static std::string escape(const std::string& field) {
        if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
        std::string out = "\"";
        for (char c : field) {
            if (c == '"') out += '"';
            out += c;
        }
        out += '"';
        return out;
    }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << escape(fields[i]);
        }
        out_ << "\r\n";
    }

    static std::string num(double v, int precision = 9) {
        std::ostringstream os;
        os << std::setprecision(precision) << v;
        return os.str();
    }

private:
    std::ofstream out_;
};

}  // namespace terngrad
