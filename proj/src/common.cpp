#include "dcrt/common.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <mutex>
#include <thread>

namespace dcrt {

namespace {

std::mutex& warning_mutex() {
    static std::mutex m;
    return m;
}

WarningHandler& warning_handler() {
    static WarningHandler handler = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
    return handler;
}

} // namespace

void set_warning_handler(WarningHandler handler) {
    std::lock_guard lock(warning_mutex());
    warning_handler() = std::move(handler);
}

void warn(const std::string& message) {
    std::lock_guard lock(warning_mutex());
    if (warning_handler()) warning_handler()(message);
}

ScopedWarningCapture::ScopedWarningCapture() {
    std::lock_guard lock(warning_mutex());
    previous_ = warning_handler();
    warning_handler() = [this](const std::string& msg) { messages_.push_back(msg); };
}

ScopedWarningCapture::~ScopedWarningCapture() {
    std::lock_guard lock(warning_mutex());
    warning_handler() = std::move(previous_);
}

bool ScopedWarningCapture::contains(const std::string& needle) const {
    return std::any_of(messages_.begin(), messages_.end(),
                       [&](const std::string& m) { return m.find(needle) != std::string::npos; });
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t key) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (key + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void parallel_for(Index count, int jobs, const std::function<void(Index)>& body) {
    if (count <= 0) return;
    const int workers = static_cast<int>(std::min<Index>(std::max(jobs, 1), count));
    if (workers == 1) {
        for (Index i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<Index> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (Index i = next++; i < count; i = next++) {
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

int default_jobs() {
    if (const char* env = std::getenv("DCRT_JOBS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1 && v <= 1024) return static_cast<int>(v);
    }
    return 1;
}

double normal_cdf(double z) {
    static const boost::math::normal standard;
    if (std::isinf(z)) return z > 0 ? 1.0 : 0.0;
    return boost::math::cdf(standard, z);
}

double normal_upper_tail(double z) {
    static const boost::math::normal standard;
    if (std::isinf(z)) return z > 0 ? 0.0 : 1.0;
    return boost::math::cdf(boost::math::complement(standard, z));
}

double normal_quantile(double u) {
    static const boost::math::normal standard;
    return boost::math::quantile(standard, u);
}

Matrix drop_column(const Matrix& X, Index j) {
    Matrix out(X.rows(), X.cols() - 1);
    if (j > 0) out.leftCols(j) = X.leftCols(j);
    if (j < X.cols() - 1) out.rightCols(X.cols() - 1 - j) = X.rightCols(X.cols() - 1 - j);
    return out;
}

} // namespace dcrt
