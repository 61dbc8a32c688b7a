#include "calm/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace calm {

const char* err_code_name(ErrCode c) {
    switch (c) {
        case ErrCode::dim_mismatch: return "DimMismatch";
        case ErrCode::shape_mismatch: return "ShapeMismatch";
        case ErrCode::zero_norm: return "ZeroNorm";
        case ErrCode::empty_input: return "EmptyInput";
        case ErrCode::empty_sequence: return "EmptySequence";
        case ErrCode::non_finite_evaluation: return "NonFiniteEvaluation";
        case ErrCode::missing_cache: return "MissingCache";
        case ErrCode::anchor_missing: return "AnchorMissing";
        case ErrCode::table_too_small: return "TableTooSmall";
        case ErrCode::insufficient_items: return "InsufficientItems";
        case ErrCode::non_finite_loss: return "NonFiniteLoss";
        case ErrCode::dataset_too_small: return "DatasetTooSmall";
        case ErrCode::checkpoint_mismatch: return "CheckpointMismatch";
        case ErrCode::empty_dataset: return "EmptyDataset";
        case ErrCode::n_out_of_range: return "NOutOfRange";
        case ErrCode::io: return "Io";
        case ErrCode::format_version_mismatch: return "FormatVersionMismatch";
        case ErrCode::fingerprint_mismatch: return "FingerprintMismatch";
        case ErrCode::parse_error: return "ParseError";
        case ErrCode::dim_inconsistency: return "DimInconsistency";
        case ErrCode::duplicate_id: return "DuplicateId";
        case ErrCode::unlabeled_item: return "UnlabeledItem";
        case ErrCode::bad_argument: return "BadArgument";
    }
    return "UnknownError";
}

Error::Error(ErrCode code, const std::string& msg)
    : std::runtime_error(std::string(err_code_name(code)) + ": " + msg), code_(code) {}

void fail(ErrCode code, const std::string& msg) { throw Error(code, msg); }

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() {
    // 53 random bits into [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) fail(ErrCode::bad_argument, "Rng::below(0)");
    const std::uint64_t threshold = (0ULL - n) % n;  // 2^64 mod n
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= threshold) return r % n;
    }
}

double dot(const Vec64& a, const Vec64& b) {
    if (a.size() != b.size())
        fail(ErrCode::dim_mismatch, "dot: " + std::to_string(a.size()) + " vs " +
                                        std::to_string(b.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(const Vec64& a) { return std::sqrt(dot(a, a)); }

double cosine_similarity(const Vec64& a, const Vec64& b) {
    if (a.size() != b.size())
        fail(ErrCode::dim_mismatch, "cosine_similarity: " + std::to_string(a.size()) +
                                        " vs " + std::to_string(b.size()));
    const double na = norm(a);
    const double nb = norm(b);
    if (na < 1e-12 || nb < 1e-12)
        fail(ErrCode::zero_norm, "cosine_similarity: vector norm below 1e-12");
    const double c = dot(a, b) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

Vec64 softmax(const Vec64& v) {
    if (v.empty()) fail(ErrCode::empty_input, "softmax of empty vector");
    const double m = *std::max_element(v.begin(), v.end());
    Vec64 out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - m);
        sum += out[i];
    }
    for (auto& x : out) x /= sum;
    return out;
}

Vec64 softmax_backward(const Vec64& y, const Vec64& dy) {
    if (y.size() != dy.size()) fail(ErrCode::dim_mismatch, "softmax_backward");
    double inner = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) inner += y[i] * dy[i];
    Vec64 dz(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) dz[i] = y[i] * (dy[i] - inner);
    return dz;
}

double mse(const Mat64& a, const Mat64& b) {
    if (!a.same_shape(b)) fail(ErrCode::shape_mismatch, "mse: matrix shapes differ");
    if (a.data.empty()) fail(ErrCode::empty_input, "mse of empty matrices");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

double mse(const Vec64& a, const Vec64& b) {
    if (a.size() != b.size()) fail(ErrCode::shape_mismatch, "mse: vector sizes differ");
    if (a.empty()) fail(ErrCode::empty_input, "mse of empty vectors");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

Vec64 matvec(const Mat64& a, const Vec64& x) {
    if (a.cols != x.size()) fail(ErrCode::dim_mismatch, "matvec: cols != len(x)");
    Vec64 y(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double s = 0.0;
        const double* row = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < a.cols; ++j) s += row[j] * x[j];
        y[i] = s;
    }
    return y;
}

Vec64 matvec_t(const Mat64& a, const Vec64& x) {
    if (a.rows != x.size()) fail(ErrCode::dim_mismatch, "matvec_t: rows != len(x)");
    Vec64 y(a.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* row = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < a.cols; ++j) y[j] += row[j] * x[i];
    }
    return y;
}

void add_outer(Mat64& a, const Vec64& x, const Vec64& y) {
    if (a.rows != x.size() || a.cols != y.size())
        fail(ErrCode::dim_mismatch, "add_outer: shape mismatch");
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* row = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < a.cols; ++j) row[j] += x[i] * y[j];
    }
}

void axpy(double a, const Vec64& x, Vec64& y) {
    if (x.size() != y.size()) fail(ErrCode::dim_mismatch, "axpy: size mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

bool all_finite(const Vec64& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

bool all_finite(const Mat64& m) {
    for (double x : m.data)
        if (!std::isfinite(x)) return false;
    return true;
}

Vec64 finite_diff_grad(const std::function<double(const Vec64&)>& f,
                       const Vec64& theta, double h) {
    if (h <= 0.0) fail(ErrCode::bad_argument, "finite_diff_grad: h must be positive");
    Vec64 grad(theta.size(), 0.0);
    Vec64 probe = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            fail(ErrCode::non_finite_evaluation,
                 "finite_diff_grad: f non-finite at coordinate " + std::to_string(i));
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

double max_relative_error(const Vec64& a, const Vec64& b, double floor) {
    if (a.size() != b.size()) fail(ErrCode::dim_mismatch, "max_relative_error");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), floor});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

}  // namespace calm
