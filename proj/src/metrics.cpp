#include "dbmif/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "dbmif/common.hpp"

namespace dbmif {

double si_sdr(const std::vector<double>& ref, const std::vector<double>& est) {
    if (ref.empty()) throw precondition_error("si_sdr: empty reference");
    if (ref.size() != est.size())
        throw precondition_error(cat("si_sdr: length mismatch, ", ref.size(), " vs ",
                                     est.size()));
    double dot = 0.0, ref_pow = 0.0;
    for (size_t i = 0; i < ref.size(); ++i) {
        dot += est[i] * ref[i];
        ref_pow += ref[i] * ref[i];
    }
    if (ref_pow == 0.0) throw precondition_error("si_sdr: reference is identically zero");
    const double alpha = dot / ref_pow;
    double target_pow = 0.0, resid_pow = 0.0;
    for (size_t i = 0; i < ref.size(); ++i) {
        const double t = alpha * ref[i];
        const double r = est[i] - t;
        target_pow += t * t;
        resid_pow += r * r;
    }
    if (target_pow == 0.0) return -120.0;  // estimate orthogonal to (or zero against) ref
    if (resid_pow < 1e-12 * target_pow) return 120.0;
    const double db = 10.0 * std::log10(target_pow / resid_pow);
    return std::min(120.0, std::max(-120.0, db));
}

DbiSummary summarize_dbi(const std::vector<int>& kstars) {
    if (kstars.empty()) throw precondition_error("summarize_dbi: no telemetry");
    DbiSummary s;
    std::vector<int> sorted(kstars);
    std::sort(sorted.begin(), sorted.end());
    const size_t n = sorted.size();
    s.median_kstar = (n % 2 == 1)
                         ? sorted[n / 2]
                         : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    double sum = 0.0;
    for (int k : sorted) {
        sum += k;
        ++s.histogram[k];
    }
    s.mean_kstar = sum / static_cast<double>(n);
    return s;
}

}  // namespace dbmif
