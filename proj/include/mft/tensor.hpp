#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "mft/errors.hpp"

namespace mft {

// Dense order-d tensor of doubles. Layout is mode-1-fastest (generalized
// column-major): the linear index of (i_0, ..., i_{d-1}) is
// i_0 + dims[0]*(i_1 + dims[1]*(i_2 + ...)). Unfoldings follow the
// Kolda-Bader convention: mode-k fibers become columns, ordered with
// lower-numbered remaining modes varying fastest. All operations return new
// tensors; instances are immutable once constructed.
//
// Mode indices are 0-based throughout.
class DenseTensor {
public:
    DenseTensor() = default;

    explicit DenseTensor(std::vector<std::size_t> dims)
        : dims_(std::move(dims)), values_(checked_size(dims_), 0.0) {}

    DenseTensor(std::vector<std::size_t> dims, std::vector<double> values)
        : dims_(std::move(dims)), values_(std::move(values)) {
        if (values_.size() != checked_size(dims_))
            throw dimension_error("tensor: value count does not match dims");
    }

    std::size_t order() const { return dims_.size(); }
    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t dim(std::size_t k) const {
        check_mode(k);
        return dims_[k];
    }
    std::size_t size() const { return values_.size(); }
    const std::vector<double>& values() const { return values_; }
    const double* data() const { return values_.data(); }

    double operator[](std::size_t linear) const { return values_[linear]; }

    // element access by multi-index
    double at(const std::vector<std::size_t>& idx) const {
        return values_[linear_index(idx)];
    }

    std::size_t linear_index(const std::vector<std::size_t>& idx) const {
        if (idx.size() != dims_.size())
            throw dimension_error("tensor: index order mismatch");
        std::size_t lin = 0, stride = 1;
        for (std::size_t k = 0; k < dims_.size(); ++k) {
            if (idx[k] >= dims_[k]) throw dimension_error("tensor: index out of range");
            lin += idx[k] * stride;
            stride *= dims_[k];
        }
        return lin;
    }

    // product of dims below k (the "left" block size in the layout)
    std::size_t stride(std::size_t k) const {
        check_mode(k);
        std::size_t s = 1;
        for (std::size_t j = 0; j < k; ++j) s *= dims_[j];
        return s;
    }

    double frobenius_norm() const { return std::sqrt(sq_norm()); }

    double sq_norm() const {
        double s = 0.0;
        for (double v : values_) s += v * v;
        return s;
    }

    bool all_finite() const {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void check_mode(std::size_t k) const {
        if (k >= dims_.size()) throw dimension_error("tensor: mode index out of range");
    }

private:
    static std::size_t checked_size(const std::vector<std::size_t>& dims) {
        if (dims.empty()) throw dimension_error("tensor: order must be >= 1");
        std::size_t n = 1;
        for (std::size_t d : dims) {
            if (d == 0) throw dimension_error("tensor: every dim must be >= 1");
            n *= d;
        }
        return n;
    }

    std::vector<std::size_t> dims_;
    std::vector<double> values_;
};

// Mode-k unfolding: dims[k] x prod(other dims). Column j enumerates the
// remaining modes with the lowest-numbered one varying fastest.
inline Eigen::MatrixXd unfold(const DenseTensor& t, std::size_t k) {
    t.check_mode(k);
    const std::size_t nk = t.dim(k);
    const std::size_t left = t.stride(k);
    const std::size_t rest = t.size() / nk;
    const std::size_t right = rest / left;
    Eigen::MatrixXd m(nk, rest);
    const double* v = t.data();
    for (std::size_t ir = 0; ir < right; ++ir)
        for (std::size_t ik = 0; ik < nk; ++ik) {
            const double* src = v + left * (ik + nk * ir);
            double* dst = m.data() + ik + nk * (left * ir); // m(ik, il + left*ir), column-major
            for (std::size_t il = 0; il < left; ++il) dst[il * nk] = src[il];
        }
    return m;
}

// Inverse of unfold: exact bit-for-bit round trip.
inline DenseTensor fold(const Eigen::MatrixXd& m, std::size_t k,
                        const std::vector<std::size_t>& dims) {
    if (k >= dims.size()) throw dimension_error("fold: mode index out of range");
    std::size_t total = 1;
    for (std::size_t d : dims) total *= d;
    const std::size_t nk = dims[k];
    if (static_cast<std::size_t>(m.rows()) != nk ||
        static_cast<std::size_t>(m.cols()) != total / nk)
        throw dimension_error("fold: matrix shape does not match dims");
    std::size_t left = 1;
    for (std::size_t j = 0; j < k; ++j) left *= dims[j];
    const std::size_t right = (total / nk) / left;
    std::vector<double> out(total);
    for (std::size_t ir = 0; ir < right; ++ir)
        for (std::size_t ik = 0; ik < nk; ++ik) {
            const double* src = m.data() + ik + nk * (left * ir);
            double* dst = out.data() + left * (ik + nk * ir);
            for (std::size_t il = 0; il < left; ++il) dst[il] = src[il * nk];
        }
    return DenseTensor(dims, std::move(out));
}

// Mode-k tensor-matrix product: replaces dims[k] by rows(m).
// Equals fold(m * unfold(t, k), k, new dims).
inline DenseTensor mode_product(const DenseTensor& t, const Eigen::MatrixXd& m,
                                std::size_t k) {
    t.check_mode(k);
    const std::size_t nk = t.dim(k);
    if (static_cast<std::size_t>(m.cols()) != nk)
        throw dimension_error("mode_product: inner dimension mismatch");
    const std::size_t nk_new = static_cast<std::size_t>(m.rows());
    const std::size_t left = t.stride(k);
    const std::size_t right = t.size() / (left * nk);

    std::vector<std::size_t> new_dims = t.dims();
    new_dims[k] = nk_new;
    std::vector<double> out(left * nk_new * right);

    if (k == 0) {
        // single GEMM over the full unfolding
        Eigen::Map<const Eigen::MatrixXd> src(t.data(), nk, right);
        Eigen::Map<Eigen::MatrixXd> dst(out.data(), nk_new, right);
        dst.noalias() = m * src;
    } else {
        for (std::size_t ir = 0; ir < right; ++ir) {
            Eigen::Map<const Eigen::MatrixXd> slice(t.data() + ir * left * nk, left, nk);
            Eigen::Map<Eigen::MatrixXd> dst(out.data() + ir * left * nk_new, left, nk_new);
            dst.noalias() = slice * m.transpose();
        }
    }
    return DenseTensor(std::move(new_dims), std::move(out));
}

// Values in layout order.
inline Eigen::VectorXd vectorize(const DenseTensor& t) {
    return Eigen::Map<const Eigen::VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
}

inline DenseTensor tensor_from_vector(const Eigen::VectorXd& v,
                                      const std::vector<std::size_t>& dims) {
    return DenseTensor(dims, std::vector<double>(v.data(), v.data() + v.size()));
}

// Rank-1 order-3 tensor: element [i,j,k] = u[i] * v[j] * w[k].
inline DenseTensor outer3(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                          const Eigen::VectorXd& w) {
    if (u.size() == 0 || v.size() == 0 || w.size() == 0)
        throw dimension_error("outer3: vectors must be nonempty");
    const std::size_t a = u.size(), b = v.size(), c = w.size();
    std::vector<double> out(a * b * c);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t j = 0; j < b; ++j)
            for (std::size_t i = 0; i < a; ++i) out[pos++] = u[i] * v[j] * w[k];
    return DenseTensor({a, b, c}, std::move(out));
}

inline DenseTensor scale(const DenseTensor& t, double a) {
    std::vector<double> out(t.values());
    for (double& v : out) v *= a;
    return DenseTensor(t.dims(), std::move(out));
}

inline DenseTensor subtract(const DenseTensor& a, const DenseTensor& b) {
    if (a.dims() != b.dims()) throw dimension_error("subtract: dims mismatch");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return DenseTensor(a.dims(), std::move(out));
}

inline DenseTensor add(const DenseTensor& a, const DenseTensor& b) {
    if (a.dims() != b.dims()) throw dimension_error("add: dims mismatch");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return DenseTensor(a.dims(), std::move(out));
}

// Order-(d-1) slice at index i of the last mode (contiguous in the layout).
inline DenseTensor last_mode_slice(const DenseTensor& t, std::size_t i) {
    const std::size_t d = t.order();
    if (d < 2) throw dimension_error("last_mode_slice: need order >= 2");
    const std::size_t nk = t.dim(d - 1);
    if (i >= nk) throw dimension_error("last_mode_slice: index out of range");
    const std::size_t len = t.size() / nk;
    std::vector<std::size_t> dims(t.dims().begin(), t.dims().end() - 1);
    return DenseTensor(dims, std::vector<double>(t.data() + i * len, t.data() + (i + 1) * len));
}

// Copy with one index of the given mode removed.
inline DenseTensor drop_index(const DenseTensor& t, std::size_t mode, std::size_t idx) {
    t.check_mode(mode);
    const std::size_t nk = t.dim(mode);
    if (idx >= nk) throw dimension_error("drop_index: index out of range");
    if (nk < 2) throw dimension_error("drop_index: mode would become empty");
    const std::size_t left = t.stride(mode);
    const std::size_t right = t.size() / (left * nk);
    std::vector<std::size_t> dims = t.dims();
    dims[mode] = nk - 1;
    std::vector<double> out(t.size() / nk * (nk - 1));
    std::size_t pos = 0;
    for (std::size_t ir = 0; ir < right; ++ir)
        for (std::size_t ik = 0; ik < nk; ++ik) {
            if (ik == idx) continue;
            const double* src = t.data() + left * (ik + nk * ir);
            std::copy(src, src + left, out.begin() + static_cast<std::ptrdiff_t>(pos));
            pos += left;
        }
    return DenseTensor(std::move(dims), std::move(out));
}

// Stack order-(d-1) tensors along a new trailing mode.
inline DenseTensor stack_last_mode(const std::vector<DenseTensor>& slices) {
    if (slices.empty()) throw dimension_error("stack_last_mode: no slices");
    const auto base = slices[0].dims();
    std::vector<std::size_t> dims = base;
    dims.push_back(slices.size());
    std::vector<double> out;
    out.reserve(slices[0].size() * slices.size());
    for (const auto& s : slices) {
        if (s.dims() != base) throw dimension_error("stack_last_mode: inconsistent slice dims");
        out.insert(out.end(), s.values().begin(), s.values().end());
    }
    return DenseTensor(std::move(dims), std::move(out));
}

// --- MFT1 binary format ---
// magic "MFT1", u64-LE order d, d u64-LE dims, then prod(dims) f64-LE values
// in layout order. Readers reject wrong magic and short payloads.

inline void save_mft1(const DenseTensor& t, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw format_error("mft1: cannot open for writing: " + path.string());
    f.write("MFT1", 4);
    auto put_u64 = [&f](std::uint64_t x) {
        unsigned char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((x >> (8 * i)) & 0xff);
        f.write(reinterpret_cast<const char*>(buf), 8);
    };
    put_u64(t.order());
    for (std::size_t d : t.dims()) put_u64(d);
    static_assert(sizeof(double) == 8);
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * 8));
    if (!f) throw format_error("mft1: write failed: " + path.string());
}

inline DenseTensor load_mft1(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw format_error("mft1: cannot open: " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "MFT1", 4) != 0)
        throw format_error("mft1: bad magic in " + path.string());
    auto get_u64 = [&f, &path]() {
        unsigned char buf[8];
        f.read(reinterpret_cast<char*>(buf), 8);
        if (!f) throw format_error("mft1: truncated header in " + path.string());
        std::uint64_t x = 0;
        for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        return x;
    };
    const std::uint64_t order = get_u64();
    if (order == 0 || order > 64) throw format_error("mft1: implausible order in " + path.string());
    std::vector<std::size_t> dims(order);
    std::size_t total = 1;
    for (auto& d : dims) {
        d = static_cast<std::size_t>(get_u64());
        if (d == 0) throw format_error("mft1: zero dim in " + path.string());
        total *= d;
    }
    std::vector<double> vals(total);
    f.read(reinterpret_cast<char*>(vals.data()), static_cast<std::streamsize>(total * 8));
    if (static_cast<std::size_t>(f.gcount()) != total * 8)
        throw format_error("mft1: truncated payload in " + path.string());
    return DenseTensor(std::move(dims), std::move(vals));
}

} // namespace mft
