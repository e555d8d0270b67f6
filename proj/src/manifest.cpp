// SPDX-License-Identifier: Apache-2.0
#include "diffage/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace diffage::data {

std::string to_string(Cohort c) {
    switch (c) {
        case Cohort::train: return "train";
        case Cohort::test: return "test";
        case Cohort::patient: return "patient";
    }
    return "train";
}

Cohort parse_cohort(const std::string& text) {
    if (text == "train") return Cohort::train;
    if (text == "test") return Cohort::test;
    if (text == "patient") return Cohort::patient;
    throw DataError("unknown cohort '" + text + "' (expected train, test or patient)");
}

std::vector<SampleRecord> Manifest::cohort(Cohort c) const {
    std::vector<SampleRecord> out;
    for (const auto& r : records)
        if (r.cohort == c) out.push_back(r);
    return out;
}

const SampleRecord* Manifest::find(const std::string& id) const {
    for (const auto& r : records)
        if (r.id == id) return &r;
    return nullptr;
}

namespace {

std::vector<std::string> split(const std::string& line, char delim) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, delim)) fields.push_back(field);
    if (!line.empty() && line.back() == delim) fields.emplace_back();
    return fields;
}

std::optional<double> parse_optional_nonneg(const std::string& text, const std::string& what, std::string& error) {
    if (text.empty()) return std::nullopt;
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
        error = what + " is not a number: '" + text + "'";
        return std::nullopt;
    }
    if (value < 0.0) {
        error = what + " must be non-negative";
        return std::nullopt;
    }
    return value;
}

std::string format_number(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path, bool check_files) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    Manifest manifest;
    manifest.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    for (auto c : {Cohort::train, Cohort::test, Cohort::patient}) manifest.counts[c] = 0;

    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": missing header line");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (line != kManifestHeader) {
        throw DataError(path.string() + ":1: header must be '" + std::string(kManifestHeader) + "'");
    }

    std::vector<std::string> errors;
    std::set<std::string> seen;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
        const auto fields = split(line, ',');
        if (fields.size() != 5) {
            errors.push_back(where + "expected 5 fields, found " + std::to_string(fields.size()));
            continue;
        }
        SampleRecord r;
        r.id = fields[0];
        r.image_path = fields[1];
        if (r.id.empty()) {
            errors.push_back(where + "empty id");
            continue;
        }
        if (fields[1].empty()) errors.push_back(where + "record '" + r.id + "' has no image_path");
        std::string err;
        r.age_years = parse_optional_nonneg(fields[2], "age_years", err);
        if (!err.empty()) errors.push_back(where + "record '" + r.id + "': " + err);
        try {
            r.cohort = parse_cohort(fields[3]);
        } catch (const DataError& e) {
            errors.push_back(where + "record '" + r.id + "': " + e.what());
            continue;
        }
        err.clear();
        r.survival_months = parse_optional_nonneg(fields[4], "survival_months", err);
        if (!err.empty()) errors.push_back(where + "record '" + r.id + "': " + err);
        if (r.cohort == Cohort::test && !r.age_years && fields[2].empty()) {
            errors.push_back(where + "test record '" + r.id + "' has no age_years");
        }
        if (!seen.insert(r.id).second) errors.push_back(where + "duplicate id '" + r.id + "'");
        manifest.counts[r.cohort] += 1;
        manifest.records.push_back(std::move(r));
    }
    if (!errors.empty()) {
        std::string msg = "invalid manifest:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw DataError(msg);
    }
    if (check_files) {
        std::vector<std::string> missing;
        for (const auto& r : manifest.records) {
            if (!std::filesystem::exists(manifest.resolve(r))) missing.push_back(r.id + " -> " + manifest.resolve(r).string());
        }
        if (!missing.empty()) {
            std::string msg = std::to_string(missing.size()) + " image file(s) missing:";
            for (const auto& m : missing) msg += "\n  " + m;
            throw DataError(msg);
        }
    }
    return manifest;
}

void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << kManifestHeader << '\n';
    for (const auto& r : records) {
        out << r.id << ',' << r.image_path.generic_string() << ',' << (r.age_years ? format_number(*r.age_years) : "")
            << ',' << to_string(r.cohort) << ',' << (r.survival_months ? format_number(*r.survival_months) : "") << '\n';
    }
}

}  // namespace diffage::data
