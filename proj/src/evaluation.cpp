// SPDX-License-Identifier: Apache-2.0
#include "diffage/evaluation.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace diffage::eval {

namespace {

void require_paired(const Vector& a, const Vector& b, const char* what) {
    if (a.size() != b.size()) {
        throw ContractViolation(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
    }
    if (a.size() == 0) throw ContractViolation(std::string(what) + ": empty input");
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    std::string s = buf;
    if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
    return s;
}

double parse_double(const std::string& text, const std::string& where) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) throw DataError(where + ": not a number: '" + text + "'");
    return v;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

Correlation pearson_r(const Vector& x, const Vector& y) {
    require_paired(x, y, "pearson_r");
    const auto n = x.size();
    if (n < 3) throw UndefinedStatistic("pearson_r: need at least 3 pairs, got " + std::to_string(n));
    const Vector dx = x.array() - x.mean();
    const Vector dy = y.array() - y.mean();
    const double sxx = dx.squaredNorm(), syy = dy.squaredNorm();
    if (sxx <= 0.0 || syy <= 0.0) throw UndefinedStatistic("pearson_r: zero variance input");
    const double r = std::clamp(dx.dot(dy) / std::sqrt(sxx * syy), -1.0, 1.0);
    Correlation out{r, 0.0, static_cast<std::size_t>(n)};
    const double dof = double(n - 2);
    if (std::abs(r) < 1.0) {
        const double t = std::abs(r) * std::sqrt(dof / (1.0 - r * r));
        out.p_value = 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(dof), t));
    }
    return out;
}

double mae(const Vector& pred, const Vector& truth) {
    require_paired(pred, truth, "mae");
    return (pred - truth).cwiseAbs().mean();
}

double r_squared(const Vector& pred, const Vector& truth) {
    require_paired(pred, truth, "r_squared");
    const double ss_tot = (truth.array() - truth.mean()).square().sum();
    if (ss_tot <= 0.0) throw UndefinedStatistic("r_squared: truth has zero variance");
    return 1.0 - (pred - truth).squaredNorm() / ss_tot;
}

Correlation survival_association(const Vector& pads, const Vector& survival_months) {
    return pearson_r(pads, survival_months);
}

double kolmogorov_tail(double lambda) {
    if (lambda <= 0.0) return 1.0;
    double q = 0.0;
    if (lambda < 1.18) {
        const double pi = std::numbers::pi;
        double sum = 0.0;
        for (int k = 1; k <= 50; ++k) {
            const double odd = 2.0 * k - 1.0;
            sum += std::exp(-odd * odd * pi * pi / (8.0 * lambda * lambda));
        }
        q = 1.0 - std::sqrt(2.0 * pi) / lambda * sum;
    } else {
        for (int k = 1; k <= 100; ++k) {
            const double term = std::exp(-2.0 * k * k * lambda * lambda);
            q += (k % 2 ? 2.0 : -2.0) * term;
            if (term < 1e-300) break;
        }
    }
    return std::clamp(q, 0.0, 1.0);
}

double ks_asymptotic_pvalue(double d, Eigen::Index m, Eigen::Index n) {
    const double en = double(m) * double(n) / double(m + n);
    const double root = std::sqrt(en);
    return kolmogorov_tail((root + 0.12 + 0.11 / root) * d);
}

double ks_exact_pvalue(double d, Eigen::Index m, Eigen::Index n, const std::vector<double>* pooled) {
    if (m < 1 || n < 1) throw ContractViolation("ks_exact_pvalue: empty sample");
    if (pooled && static_cast<Eigen::Index>(pooled->size()) != m + n) {
        throw ContractViolation("ks_exact_pvalue: pooled size must equal m + n");
    }
    std::vector<double> z;
    if (pooled) {
        z = *pooled;
        std::sort(z.begin(), z.end());
    }
    // Only positions between distinct pooled values are observable ECDF points.
    auto boundary = [&](Eigen::Index k) { return !pooled || k == 0 || k == m + n || z[k - 1] < z[k]; };
    // D = |i n - j m| / (m n); compare on the integer lattice.
    const auto threshold = static_cast<long long>(std::llround(d * double(m) * double(n)));
    if (threshold <= 0) return 1.0;
    auto hits = [&](Eigen::Index i, Eigen::Index j) {
        return boundary(i + j) && std::llabs((long long)(i * n) - (long long)(j * m)) >= threshold;
    };
    // Paths avoiding every hit, counted in double (exact below 2^53).
    std::vector<double> row(static_cast<std::size_t>(n + 1), 0.0), total_row(static_cast<std::size_t>(n + 1), 0.0);
    for (Eigen::Index i = 0; i <= m; ++i) {
        for (Eigen::Index j = 0; j <= n; ++j) {
            const std::size_t sj = static_cast<std::size_t>(j);
            double avoid = 0.0, all = 0.0;
            if (i == 0 && j == 0) {
                avoid = 1.0;
                all = 1.0;
            } else {
                if (i > 0) {
                    avoid += row[sj];
                    all += total_row[sj];
                }
                if (j > 0) {
                    avoid += row[sj - 1];
                    all += total_row[sj - 1];
                }
            }
            if (hits(i, j)) avoid = 0.0;
            row[sj] = avoid;
            total_row[sj] = all;
        }
    }
    const double total = total_row[static_cast<std::size_t>(n)];
    return std::clamp((total - row[static_cast<std::size_t>(n)]) / total, 0.0, 1.0);
}

KsResult ks_two_sample(const Vector& a, const Vector& b) {
    if (a.size() == 0 || b.size() == 0) throw ContractViolation("ks_two_sample: empty input");
    std::vector<double> sa(a.data(), a.data() + a.size()), sb(b.data(), b.data() + b.size());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    const double m = double(sa.size()), n = double(sb.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < sa.size() || j < sb.size()) {
        double v;
        if (j == sb.size() || (i < sa.size() && sa[i] <= sb[j])) {
            v = sa[i];
        } else {
            v = sb[j];
        }
        while (i < sa.size() && sa[i] == v) ++i;
        while (j < sb.size() && sb[j] == v) ++j;
        d = std::max(d, std::abs(double(i) / m - double(j) / n));
    }
    KsResult out;
    out.statistic = d;
    if (a.size() <= kExactKsLimit && b.size() <= kExactKsLimit) {
        std::vector<double> pooled(sa);
        pooled.insert(pooled.end(), sb.begin(), sb.end());
        out.p_value = ks_exact_pvalue(d, a.size(), b.size(), &pooled);
        out.exact = true;
    } else {
        out.p_value = ks_asymptotic_pvalue(d, a.size(), b.size());
    }
    return out;
}

EvalReport build_report(const std::string& cohort, std::vector<RecordRow> rows, const ReportOptions& options) {
    if (rows.empty()) throw DataError("cannot build a report for an empty cohort");
    EvalReport rep;
    rep.cohort = cohort;
    const auto n = static_cast<Eigen::Index>(rows.size());
    Vector chron(n), pred(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        chron[i] = rows[static_cast<std::size_t>(i)].chronological_age;
        pred[i] = rows[static_cast<std::size_t>(i)].predicted_age;
    }
    if (options.bias_correct) {
        const Vector dc = chron.array() - chron.mean();
        const double sxx = dc.squaredNorm();
        if (sxx > 0.0) {
            const Vector pad = pred - chron;
            const double slope = dc.dot(pad) / sxx;
            const double intercept = pad.mean() - slope * chron.mean();
            for (Eigen::Index i = 0; i < n; ++i) pred[i] -= intercept + slope * chron[i];
            rep.bias_corrected = true;
        } else {
            rep.notes.push_back("bias correction skipped: chronological ages have zero variance");
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        auto& row = rows[static_cast<std::size_t>(i)];
        row.predicted_age = pred[i];
        row.pad = pred[i] - chron[i];
    }
    rep.rows = std::move(rows);

    const Vector pad = pred - chron;
    rep.mae = mae(pred, chron);
    rep.pad_mean = pad.mean();
    rep.pad_std = std::sqrt((pad.array() - rep.pad_mean).square().mean());
    try {
        rep.correlation = pearson_r(pred, chron);
    } catch (const UndefinedStatistic& e) {
        rep.notes.push_back(std::string("insufficient-n or degenerate input for r: ") + e.what());
    }
    try {
        rep.r_squared = r_squared(pred, chron);
    } catch (const UndefinedStatistic& e) {
        rep.notes.push_back(std::string("R^2 undefined: ") + e.what());
    }

    std::vector<double> sp, sm;
    for (const auto& row : rep.rows) {
        if (row.survival_months) {
            sp.push_back(row.pad);
            sm.push_back(*row.survival_months);
        }
    }
    if (!sp.empty()) {
        try {
            const auto c = survival_association(Eigen::Map<Vector>(sp.data(), Eigen::Index(sp.size())),
                                                Eigen::Map<Vector>(sm.data(), Eigen::Index(sm.size())));
            rep.survival = SurvivalBlock{c.r, c.p_value, c.n};
        } catch (const UndefinedStatistic& e) {
            rep.notes.push_back(std::string("survival association undefined: ") + e.what());
        }
    }
    return rep;
}

KsBlock compare_pads(const EvalReport& report, const std::vector<ExternalPrediction>& reference, const std::string& label) {
    std::map<std::string, double> chron;
    for (const auto& row : report.rows) chron[row.id] = row.chronological_age;
    std::vector<double> ref;
    std::vector<std::string> unknown;
    for (const auto& p : reference) {
        const auto it = chron.find(p.id);
        if (it == chron.end()) {
            unknown.push_back(p.id);
        } else {
            ref.push_back(p.predicted_age - it->second);
        }
    }
    if (!unknown.empty()) {
        std::string msg = label + ": predictions for ids not in the evaluated cohort:";
        for (const auto& id : unknown) msg += " " + id;
        throw DataError(msg);
    }
    if (ref.empty()) throw DataError(label + ": no reference predictions");
    Vector ours(static_cast<Eigen::Index>(report.rows.size()));
    for (std::size_t i = 0; i < report.rows.size(); ++i) ours[Eigen::Index(i)] = report.rows[i].pad;
    const auto ks = ks_two_sample(ours, Eigen::Map<Vector>(ref.data(), Eigen::Index(ref.size())));
    return {label, ks.statistic, ks.p_value, ks.exact, report.rows.size(), ref.size()};
}

std::vector<ExternalPrediction> read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open predictions " + path.string());
    std::string line;
    std::getline(in, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,predicted_age") throw DataError(path.string() + ":1: header must be 'id,predicted_age'");
    std::vector<ExternalPrediction> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_csv(line);
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (f.size() != 2) throw DataError(where + ": expected 2 fields");
        out.push_back({f[0], parse_double(f[1], where)});
    }
    return out;
}

void write_predictions(const std::filesystem::path& path, const std::vector<ExternalPrediction>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "id,predicted_age\n";
    for (const auto& r : rows) out << r.id << ',' << exact_number(r.predicted_age) << '\n';
}

std::string exact_number(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string format_pad_summary(double mean, double std) {
    return "mean " + fixed(mean, 2) + ", std " + fixed(std, 2);
}

std::string format_p_value(double p) {
    char buf[32];
    if (p < 1e-300) return "< 1e-300";
    if (p >= 1e-4) {
        std::snprintf(buf, sizeof buf, "%.4f", p);
    } else {
        std::snprintf(buf, sizeof buf, "%.2e", p);
    }
    return buf;
}

namespace {

std::string p_clause(double p) {
    const auto text = format_p_value(p);
    return text.front() == '<' ? "p " + text : "p = " + text;
}

}  // namespace

std::string render_table(const EvalReport& report) {
    std::string out = "id,chronological_age,predicted_age,pad,survival_months\n";
    for (const auto& r : report.rows) {
        out += r.id + ',' + exact_number(r.chronological_age) + ',' + exact_number(r.predicted_age) + ',' +
               exact_number(r.pad) + ',' + (r.survival_months ? exact_number(*r.survival_months) : "") + '\n';
    }
    return out;
}

std::vector<RecordRow> parse_table(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    if (line != "id,chronological_age,predicted_age,pad,survival_months") throw DataError("unexpected report table header");
    std::vector<RecordRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv(line);
        const std::string where = "table line " + std::to_string(lineno);
        if (f.size() != 5) throw DataError(where + ": expected 5 fields");
        RecordRow r;
        r.id = f[0];
        r.chronological_age = parse_double(f[1], where);
        r.predicted_age = parse_double(f[2], where);
        r.pad = parse_double(f[3], where);
        if (!f[4].empty()) r.survival_months = parse_double(f[4], where);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string render_summary(const EvalReport& report) {
    std::ostringstream os;
    os << "Brain age evaluation: cohort " << report.cohort << ", n = " << report.rows.size() << '\n';
    if (report.correlation) {
        os << "Pearson r      " << fixed(report.correlation->r, 4) << " (" << p_clause(report.correlation->p_value)
           << ")\n";
    } else {
        os << "Pearson r      n/a (insufficient n)\n";
    }
    os << "MAE            " << fixed(report.mae, 2) << " years\n";
    os << "R^2            " << (report.r_squared ? fixed(*report.r_squared, 4) : std::string("n/a")) << '\n';
    os << "Brain-PAD      " << format_pad_summary(report.pad_mean, report.pad_std)
       << (report.bias_corrected ? " (bias corrected)" : "") << '\n';
    if (report.ks) {
        os << "KS vs " << report.ks->reference << "  D = " << fixed(report.ks->statistic, 4)
           << " (" << p_clause(report.ks->p_value) << ", " << (report.ks->exact ? "exact" : "asymptotic")
           << ", n = " << report.ks->n_ours << " vs " << report.ks->n_reference << ")\n";
    }
    if (report.survival) {
        os << "Survival r     " << fixed(report.survival->r, 4) << " (" << p_clause(report.survival->p_value)
           << ", n = " << report.survival->n << ")\n";
    }
    for (const auto& note : report.notes) os << "note: " << note << '\n';
    return os.str();
}

std::string render_key_values(const EvalReport& report) {
    std::ostringstream os;
    auto opt = [](const std::optional<double>& v) { return v ? exact_number(*v) : std::string("NA"); };
    os << "cohort = " << report.cohort << '\n';
    os << "n = " << report.rows.size() << '\n';
    os << "pearson_r = " << (report.correlation ? exact_number(report.correlation->r) : "NA") << '\n';
    os << "r_p_value = " << (report.correlation ? exact_number(report.correlation->p_value) : "NA") << '\n';
    os << "mae = " << exact_number(report.mae) << '\n';
    os << "r_squared = " << opt(report.r_squared) << '\n';
    os << "pad_mean = " << exact_number(report.pad_mean) << '\n';
    os << "pad_std = " << exact_number(report.pad_std) << '\n';
    os << "bias_corrected = " << (report.bias_corrected ? "true" : "false") << '\n';
    if (report.survival) {
        os << "survival_r = " << exact_number(report.survival->r) << '\n';
        os << "survival_p = " << exact_number(report.survival->p_value) << '\n';
        os << "survival_n = " << report.survival->n << '\n';
    }
    if (report.ks) {
        os << "ks_reference = " << report.ks->reference << '\n';
        os << "ks_statistic = " << exact_number(report.ks->statistic) << '\n';
        os << "ks_p_value = " << exact_number(report.ks->p_value) << '\n';
        os << "ks_method = " << (report.ks->exact ? "exact" : "asymptotic") << '\n';
    }
    return os.str();
}

namespace {

struct Axis {
    double lo, hi, px_lo, px_hi;
    double operator()(double v) const { return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo); }
};

std::string svg_header(int w, int h) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" + std::to_string(h) +
           "\" viewBox=\"0 0 " + std::to_string(w) + " " + std::to_string(h) + "\">\n" +
           "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string text(double x, double y, const std::string& s, const char* anchor = "middle") {
    return "<text x=\"" + fixed(x, 1) + "\" y=\"" + fixed(y, 1) + "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"" +
           anchor + "\">" + s + "</text>\n";
}

std::string line(double x1, double y1, double x2, double y2, const char* stroke = "black", const char* extra = "") {
    return "<line x1=\"" + fixed(x1, 2) + "\" y1=\"" + fixed(y1, 2) + "\" x2=\"" + fixed(x2, 2) + "\" y2=\"" + fixed(y2, 2) +
           "\" stroke=\"" + stroke + "\"" + extra + "/>\n";
}

double quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * double(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - double(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::string render_scatter_svg(const EvalReport& report) {
    double lo = 1e300, hi = -1e300;
    for (const auto& r : report.rows) {
        lo = std::min({lo, r.chronological_age, r.predicted_age});
        hi = std::max({hi, r.chronological_age, r.predicted_age});
    }
    const double pad = std::max(1.0, 0.05 * (hi - lo));
    lo -= pad;
    hi += pad;
    const Axis ax{lo, hi, 60, 460}, ay{lo, hi, 460, 60};
    std::string svg = svg_header(500, 500);
    svg += line(60, 460, 460, 460) + line(60, 460, 60, 60);
    svg += line(ax(lo), ay(lo), ax(hi), ay(hi), "gray", " stroke-dasharray=\"4 4\"");
    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4.0;
        svg += text(ax(v), 478, fixed(v, 0)) + text(52, ay(v) + 4, fixed(v, 0), "end");
    }
    svg += text(260, 496, "Chronological age (years)");
    svg += "<text x=\"16\" y=\"260\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" "
           "transform=\"rotate(-90 16 260)\">Predicted age (years)</text>\n";
    svg += text(260, 36, "Predicted vs chronological age (" + report.cohort + ")");
    for (const auto& r : report.rows) {
        svg += "<circle cx=\"" + fixed(ax(r.chronological_age), 2) + "\" cy=\"" + fixed(ay(r.predicted_age), 2) +
               "\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.7\"/>\n";
    }
    svg += "</svg>\n";
    return svg;
}

std::string render_pad_boxplot_svg(const EvalReport& report) {
    std::vector<double> pads;
    for (const auto& r : report.rows) pads.push_back(r.pad);
    std::sort(pads.begin(), pads.end());
    const double q1 = quantile(pads, 0.25), med = quantile(pads, 0.5), q3 = quantile(pads, 0.75);
    const double iqr = q3 - q1;
    double wlo = q1, whi = q3;
    for (double v : pads) {
        if (v >= q1 - 1.5 * iqr) wlo = std::min(wlo, v);
        if (v <= q3 + 1.5 * iqr) whi = std::max(whi, v);
    }
    double lo = std::min(pads.front(), 0.0), hi = std::max(pads.back(), 0.0);
    const double margin = std::max(1.0, 0.05 * (hi - lo));
    lo -= margin;
    hi += margin;
    const Axis ay{lo, hi, 360, 50};
    std::string svg = svg_header(300, 400);
    svg += line(60, 360, 60, 50);
    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4.0;
        svg += text(52, ay(v) + 4, fixed(v, 1), "end");
    }
    svg += line(60, ay(0), 280, ay(0), "gray", " stroke-dasharray=\"4 4\"");
    const double cx = 170, half = 40;
    svg += line(cx, ay(wlo), cx, ay(q1)) + line(cx, ay(q3), cx, ay(whi));
    svg += line(cx - half / 2, ay(wlo), cx + half / 2, ay(wlo)) + line(cx - half / 2, ay(whi), cx + half / 2, ay(whi));
    svg += "<rect x=\"" + fixed(cx - half, 2) + "\" y=\"" + fixed(ay(q3), 2) + "\" width=\"" + fixed(2 * half, 2) +
           "\" height=\"" + fixed(ay(q1) - ay(q3), 2) + "\" fill=\"lightsteelblue\" stroke=\"black\"/>\n";
    svg += line(cx - half, ay(med), cx + half, ay(med), "black", " stroke-width=\"2\"");
    for (double v : pads) {
        if (v < wlo || v > whi) {
            svg += "<circle cx=\"" + fixed(cx, 2) + "\" cy=\"" + fixed(ay(v), 2) + "\" r=\"3\" fill=\"none\" stroke=\"black\"/>\n";
        }
    }
    svg += text(cx, 380, "Brain-PAD (" + report.cohort + ", n = " + std::to_string(pads.size()) + ")");
    svg += text(150, 30, "Brain-PAD distribution (years)");
    svg += "</svg>\n";
    return svg;
}

std::vector<std::filesystem::path> write_report(const std::filesystem::path& out_dir, const EvalReport& report) {
    std::filesystem::create_directories(out_dir);
    const std::vector<std::pair<std::string, std::string>> files = {
        {"table.csv", render_table(report)},
        {"summary.txt", render_summary(report)},
        {"summary.kv", render_key_values(report)},
        {"scatter.svg", render_scatter_svg(report)},
        {"pad_boxplot.svg", render_pad_boxplot_svg(report)},
    };
    std::vector<std::filesystem::path> written;
    for (const auto& [name, content] : files) {
        const auto path = out_dir / name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write " + path.string());
        out << content;
        written.push_back(path);
    }
    return written;
}

}  // namespace diffage::eval
