// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diffage/data.hpp"
#include "diffage/networks.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace diffage::eval {

using Vector = Eigen::VectorXd;

struct Correlation {
    double r = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
};

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
    bool exact = false;
};

/// Largest sample size (both samples) for which the KS p-value is enumerated exactly.
inline constexpr Eigen::Index kExactKsLimit = 25;

Correlation pearson_r(const Vector& x, const Vector& y);
double mae(const Vector& pred, const Vector& truth);
double r_squared(const Vector& pred, const Vector& truth);
KsResult ks_two_sample(const Vector& a, const Vector& b);
Correlation survival_association(const Vector& pads, const Vector& survival_months);

/// P(D >= d) for samples of size m and n drawn from one continuous law, or
/// from the pooled values when `pooled` is given (ties handled exactly).
double ks_exact_pvalue(double d, Eigen::Index m, Eigen::Index n, const std::vector<double>* pooled = nullptr);
/// Asymptotic Kolmogorov tail at the effective-n corrected statistic.
double ks_asymptotic_pvalue(double d, Eigen::Index m, Eigen::Index n);
/// Survival function of the Kolmogorov distribution.
double kolmogorov_tail(double lambda);

struct RecordRow {
    std::string id;
    double chronological_age = 0.0;
    double predicted_age = 0.0;
    double pad = 0.0;
    std::optional<double> survival_months;
};

struct SurvivalBlock {
    double r = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
};

struct KsBlock {
    std::string reference;
    double statistic = 0.0;
    double p_value = 1.0;
    bool exact = false;
    std::size_t n_ours = 0;
    std::size_t n_reference = 0;
};

struct EvalReport {
    std::string cohort;
    std::vector<RecordRow> rows;
    /// Empty with fewer than three records or zero variance.
    std::optional<Correlation> correlation;
    double mae = 0.0;
    std::optional<double> r_squared;
    double pad_mean = 0.0;
    /// Population standard deviation.
    double pad_std = 0.0;
    std::optional<SurvivalBlock> survival;
    std::optional<KsBlock> ks;
    bool bias_corrected = false;
    std::vector<std::string> notes;
};

struct ReportOptions {
    /// Regress PAD on chronological age and report residuals instead.
    bool bias_correct = false;
};

struct ExternalPrediction {
    std::string id;
    double predicted_age;
};

/// Assembles the report from per-record values. Optional survival values
/// feed the survival block when at least three are present.
EvalReport build_report(const std::string& cohort, std::vector<RecordRow> rows, const ReportOptions& options = {});

/// KS between the report's PADs and the PADs of another model's predictions,
/// paired by id against the report's chronological ages.
KsBlock compare_pads(const EvalReport& report, const std::vector<ExternalPrediction>& reference, const std::string& label);

std::vector<ExternalPrediction> read_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path, const std::vector<ExternalPrediction>& rows);

/// Shortest round-trip decimal form; parsing it back yields the same double.
std::string exact_number(double v);
std::string format_pad_summary(double mean, double std);
std::string format_p_value(double p);

std::string render_table(const EvalReport& report);
std::string render_summary(const EvalReport& report);
std::string render_key_values(const EvalReport& report);
std::string render_scatter_svg(const EvalReport& report);
std::string render_pad_boxplot_svg(const EvalReport& report);

/// Parses a table written by render_table back into rows.
std::vector<RecordRow> parse_table(const std::string& text);

/// Writes table.csv, summary.txt, summary.kv, scatter.svg and pad_boxplot.svg.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& out_dir, const EvalReport& report);

/// Eval-mode age predictions, encoded in chunks.
template <typename Scalar>
std::vector<double> predict_ages(ModelBundle<Scalar>& bundle, const std::vector<data::Image>& images,
                                 std::size_t chunk = 32) {
    const auto size = bundle.config.unet.image_size;
    std::vector<double> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        const std::size_t count = std::min(chunk, images.size() - start);
        Tensor<Scalar> x(static_cast<Index>(count), 1, size, size);
        for (std::size_t i = 0; i < count; ++i) {
            const auto& img = images[start + i];
            if (img.rows() != size || img.cols() != size) throw DataError("image size does not match the model");
            x.sample_matrix(static_cast<Index>(i)).row(0) =
                Eigen::Map<const Eigen::RowVectorXd>(img.data(), img.size()).template cast<Scalar>();
        }
        const auto z = semantic_encode(bundle, x);
        const auto ages = age_predict(bundle, z);
        for (Index i = 0; i < ages.size(); ++i) out.push_back(static_cast<double>(ages[i]));
    }
    return out;
}

/// Predicts every record of `cohort` and builds the report. All records must
/// carry a chronological age.
template <typename Scalar>
EvalReport evaluate(ModelBundle<Scalar>& bundle, const data::Manifest& manifest, data::Cohort cohort,
                    const ReportOptions& options = {}) {
    const auto records = manifest.cohort(cohort);
    if (records.empty()) throw DataError("cohort '" + data::to_string(cohort) + "' has no records in the manifest");
    std::vector<std::string> unlabeled;
    for (const auto& r : records)
        if (!r.age_years) unlabeled.push_back(r.id);
    if (!unlabeled.empty()) {
        std::string msg = "records without age_years in cohort '" + data::to_string(cohort) + "':";
        for (const auto& id : unlabeled) msg += " " + id;
        throw DataError(msg);
    }
    const auto images = data::load_images(manifest, records, bundle.config.unet.image_size);
    const auto predicted = predict_ages(bundle, images);
    std::vector<RecordRow> rows;
    for (std::size_t i = 0; i < records.size(); ++i) {
        RecordRow row;
        row.id = records[i].id;
        row.chronological_age = *records[i].age_years;
        row.predicted_age = predicted[i];
        row.pad = row.predicted_age - row.chronological_age;
        row.survival_months = records[i].survival_months;
        rows.push_back(std::move(row));
    }
    return build_report(data::to_string(cohort), std::move(rows), options);
}

}  // namespace diffage::eval
