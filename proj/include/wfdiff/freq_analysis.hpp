#pragma once

// Amplitude-swap diagnostics: exchange Fourier amplitudes between two images
// in pixel space (S1), in the LL subband only (S2), or in all four Haar
// subbands (S3), and score the recombined images against a reference.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wfdiff/fourier.hpp"
#include "wfdiff/imageio.hpp"
#include "wfdiff/metrics.hpp"
#include "wfdiff/wavelet.hpp"

namespace wfdiff {

enum class SwapStrategy {
    pixel,         // S1: whole-image spectrum
    ll_subband,    // S2: LL subband only, detail bands untouched
    all_subbands,  // S3: every subband
};

inline SwapStrategy parse_swap_strategy(const std::string& name) {
    if (name == "s1" || name == "S1") return SwapStrategy::pixel;
    if (name == "s2" || name == "S2") return SwapStrategy::ll_subband;
    if (name == "s3" || name == "S3") return SwapStrategy::all_subbands;
    throw std::invalid_argument("unknown swap strategy '" + name + "' (expected s1, s2 or s3)");
}

inline std::string to_string(SwapStrategy s) {
    switch (s) {
        case SwapStrategy::pixel: return "s1";
        case SwapStrategy::ll_subband: return "s2";
        case SwapStrategy::all_subbands: return "s3";
    }
    return "?";
}

namespace detail {

template <class T>
std::pair<Tensor<T>, Tensor<T>> swap_planes(const Tensor<T>& a, const Tensor<T>& b) {
    const auto sa = fft2(a), sb = fft2(b);
    return {recombine(sb, sa), recombine(sa, sb)};
}

}  // namespace detail

/// Returns (amplitude of b with phase of a, amplitude of a with phase of b)
/// under the chosen strategy. No clamping; values stay in float space.
template <class T>
std::pair<Tensor<T>, Tensor<T>> swap_amplitude(const Tensor<T>& a, const Tensor<T>& b, SwapStrategy strategy) {
    if (a.shape() != b.shape()) {
        throw DimensionError("swap: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    NoGradGuard no_grad;
    if (strategy == SwapStrategy::pixel) return detail::swap_planes(a, b);

    const auto pa = pad_even(a), pb = pad_even(b);
    const auto da = dwt2(pa.image), db = dwt2(pb.image);
    SubbandSet<T> oa = da, ob = db;
    std::tie(oa.ll, ob.ll) = detail::swap_planes(da.ll, db.ll);
    if (strategy == SwapStrategy::all_subbands) {
        std::tie(oa.lh, ob.lh) = detail::swap_planes(da.lh, db.lh);
        std::tie(oa.hl, ob.hl) = detail::swap_planes(da.hl, db.hl);
        std::tie(oa.hh, ob.hh) = detail::swap_planes(da.hh, db.hh);
    }
    return {crop(idwt2(oa), pa.height, pa.width), crop(idwt2(ob), pb.height, pb.width)};
}

struct PairMetrics {
    std::string pair_id;
    double psnr_db = 0.0;
    double ssim = 0.0;
    std::string error;  // empty when the row was scored

    bool ok() const { return error.empty(); }
};

struct MetricReport {
    std::vector<PairMetrics> rows;
    double mean_psnr_db = 0.0;
    double mean_ssim = 0.0;
    std::size_t scored = 0;
};

/// Scores one (degraded, reference) pair: the recombination of the
/// reference amplitude with the degraded phase, against the reference.
template <class T>
PairMetrics score_pair(const std::string& id, const Tensor<T>& degraded, const Tensor<T>& reference,
                       SwapStrategy strategy) {
    const auto swapped = swap_amplitude(degraded, reference, strategy).first;
    return {id, psnr(swapped, reference), ssim(swapped, reference), {}};
}

inline void finalize_means(MetricReport& report) {
    double sp = 0.0, ss = 0.0;
    report.scored = 0;
    for (const auto& r : report.rows) {
        if (!r.ok()) continue;
        sp += r.psnr_db;
        ss += r.ssim;
        ++report.scored;
    }
    if (report.scored == 0) throw std::runtime_error("analyze: no scorable pairs");
    report.mean_psnr_db = sp / static_cast<double>(report.scored);
    report.mean_ssim = ss / static_cast<double>(report.scored);
}

template <class T>
MetricReport analyze_pairs(const std::vector<std::pair<Tensor<T>, Tensor<T>>>& pairs, SwapStrategy strategy) {
    if (pairs.empty()) throw std::runtime_error("analyze: empty pair list");
    MetricReport report;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        try {
            report.rows.push_back(score_pair(std::to_string(i), pairs[i].first, pairs[i].second, strategy));
        } catch (const std::exception& e) {
            report.rows.push_back({std::to_string(i), 0.0, 0.0, e.what()});
        }
    }
    finalize_means(report);
    return report;
}

struct ManifestRow {
    std::string degraded_path;
    std::string reference_path;
};

/// Two-column CSV (degraded_path, reference_path). An optional header row is
/// skipped; relative paths resolve against the manifest's directory.
inline std::vector<ManifestRow> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest " + path);
    const auto base = std::filesystem::path(path).parent_path();
    std::vector<ManifestRow> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw FormatError("manifest: expected two columns in line '" + line + "'");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        ManifestRow row{trim(line.substr(0, comma)), trim(line.substr(comma + 1))};
        if (first && row.degraded_path == "degraded_path") {
            first = false;
            continue;
        }
        first = false;
        auto resolve = [&](const std::string& p) {
            const std::filesystem::path fp(p);
            return (fp.is_relative() ? base / fp : fp).string();
        };
        rows.push_back({resolve(row.degraded_path), resolve(row.reference_path)});
    }
    return rows;
}

/// Reads every manifest row, scores it, and collects per-row failures
/// without aborting. Throws only when nothing could be scored.
inline MetricReport analyze_corpus(const std::vector<ManifestRow>& rows, SwapStrategy strategy) {
    if (rows.empty()) throw std::runtime_error("analyze: manifest has no pairs");
    MetricReport report;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::string id = std::to_string(i);
        try {
            const auto deg = read_ppm<float>(rows[i].degraded_path);
            const auto ref = read_ppm<float>(rows[i].reference_path);
            report.rows.push_back(score_pair(id, deg, ref, strategy));
        } catch (const std::exception& e) {
            report.rows.push_back({id, 0.0, 0.0, e.what()});
        }
    }
    finalize_means(report);
    return report;
}

/// Shortest decimal that round-trips; "inf" / "nan" for non-finite values.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_number(const std::string& s) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw FormatError("not a number: '" + s + "'");
    return v;
}

/// CSV with columns pair_id,psnr_db,ssim; failed rows carry nan and the last
/// row holds the means.
inline std::string report_csv(const MetricReport& report) {
    std::ostringstream os;
    os << "pair_id,psnr_db,ssim\n";
    for (const auto& r : report.rows) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        os << r.pair_id << ',' << format_number(r.ok() ? r.psnr_db : nan) << ','
           << format_number(r.ok() ? r.ssim : nan) << '\n';
    }
    os << "mean," << format_number(report.mean_psnr_db) << ',' << format_number(report.mean_ssim) << '\n';
    return os.str();
}

}  // namespace wfdiff
