#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace calm {

// All numeric state is 64-bit float. Vectors are plain std::vector<double>;
// matrices are dense row-major.
using Vec64 = std::vector<double>;

struct Mat64 {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat64() = default;
    Mat64(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    bool same_shape(const Mat64& o) const { return rows == o.rows && cols == o.cols; }
};

enum class ErrCode {
    dim_mismatch,
    shape_mismatch,
    zero_norm,
    empty_input,
    empty_sequence,
    non_finite_evaluation,
    missing_cache,
    anchor_missing,
    table_too_small,
    insufficient_items,
    non_finite_loss,
    dataset_too_small,
    checkpoint_mismatch,
    empty_dataset,
    n_out_of_range,
    io,
    format_version_mismatch,
    fingerprint_mismatch,
    parse_error,
    dim_inconsistency,
    duplicate_id,
    unlabeled_item,
    bad_argument,
};

const char* err_code_name(ErrCode c);

class Error : public std::runtime_error {
  public:
    Error(ErrCode code, const std::string& msg);
    ErrCode code() const noexcept { return code_; }

  private:
    ErrCode code_;
};

[[noreturn]] void fail(ErrCode code, const std::string& msg);

// xoshiro256** seeded through splitmix64. Identical seed gives an identical
// stream; no global state.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    // Standard normal via Box-Muller (spare value cached).
    double normal();
    // Uniform integer in [0, n), rejection-sampled so every value is equally likely.
    std::uint64_t below(std::uint64_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

  private:
    std::uint64_t state_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

double dot(const Vec64& a, const Vec64& b);
double norm(const Vec64& a);

// a.b / (|a||b|), clamped to [-1, 1] against rounding. Throws zero_norm if
// either norm is below 1e-12.
double cosine_similarity(const Vec64& a, const Vec64& b);

// Max-subtracted softmax; output is positive and sums to 1.
Vec64 softmax(const Vec64& v);

// Given y = softmax(z) and dL/dy, returns dL/dz.
Vec64 softmax_backward(const Vec64& y, const Vec64& dy);

double mse(const Mat64& a, const Mat64& b);
double mse(const Vec64& a, const Vec64& b);

Vec64 matvec(const Mat64& a, const Vec64& x);    // A x
Vec64 matvec_t(const Mat64& a, const Vec64& x);  // A^T x
void add_outer(Mat64& a, const Vec64& x, const Vec64& y);  // A += x y^T
void axpy(double a, const Vec64& x, Vec64& y);             // y += a x

bool all_finite(const Vec64& v);
bool all_finite(const Mat64& m);

// Central differences (f(t+h e_i) - f(t-h e_i)) / 2h per coordinate. The
// oracle every analytic gradient in this codebase is checked against.
Vec64 finite_diff_grad(const std::function<double(const Vec64&)>& f,
                       const Vec64& theta, double h);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor turns coordinates
// with near-zero gradient into an absolute comparison instead of dividing
// by noise.
double max_relative_error(const Vec64& a, const Vec64& b, double floor = 1e-3);

}  // namespace calm
