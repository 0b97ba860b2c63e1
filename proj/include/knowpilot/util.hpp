#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace knowpilot {

using Json = nlohmann::json;

/// Milliseconds since the Unix epoch.
using TimestampMs = std::int64_t;

// ---------------------------------------------------------------------------
// Hashing and encodings

/// 64-bit FNV-1a. Stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view data) noexcept;

/// Lowercase hex rendering, zero padded to 16 digits.
std::string hex64(std::uint64_t value);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws std::invalid_argument on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Little-endian float32 packing used by every on-disk embedding.
std::string encode_embedding(std::span<const float> values);
std::vector<float> decode_embedding(std::string_view base64);

// ---------------------------------------------------------------------------
// Text

/// Splits on ASCII whitespace; punctuation stays attached to its word.
std::vector<std::string> split_words(std::string_view text);
/// Tokens joined by single spaces.
std::string normalize_whitespace(std::string_view text);
std::string join(std::span<const std::string> parts, std::string_view separator);
std::string trim(std::string_view text);
std::string to_lower_ascii(std::string_view text);

// ---------------------------------------------------------------------------
// Files

/// Reads every complete line of a JSONL file. A trailing line without a
/// newline (torn write) is ignored. Missing file yields an empty list.
std::vector<Json> read_jsonl(const std::filesystem::path& path);
/// Appends lines and flushes them to disk before returning.
void append_jsonl_lines(const std::filesystem::path& path, std::span<const Json> lines);
void append_jsonl(const std::filesystem::path& path, const Json& line);
/// Write-to-temp then rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Runtime services injected everywhere time or randomness is observed.

class Clock {
public:
    virtual ~Clock() = default;
    virtual TimestampMs now_ms() = 0;
};

class SystemClock final : public Clock {
public:
    TimestampMs now_ms() override;
};

/// Deterministic clock for tests and replays. Each read returns the
/// current value and then advances by `step_ms`.
class LogicalClock final : public Clock {
public:
    explicit LogicalClock(TimestampMs start = 0, TimestampMs step_ms = 0)
        : now_(start), step_(step_ms) {}

    TimestampMs now_ms() override;
    void advance(TimestampMs delta_ms);
    void set(TimestampMs value);

private:
    std::mutex mutex_;
    TimestampMs now_;
    TimestampMs step_;
};

/// Opaque 128-bit identifiers rendered as 32 hex digits.
class IdGenerator {
public:
    /// Seeded from std::random_device.
    IdGenerator();
    explicit IdGenerator(std::uint64_t seed);

    std::string next();

private:
    std::mutex mutex_;
    std::mt19937_64 engine_;
};

/// Time and identity sources shared by the stores and the pipeline.
struct Runtime {
    std::shared_ptr<Clock> clock;
    std::shared_ptr<IdGenerator> ids;

    static Runtime system();
    /// Logical clock plus seeded ids.
    static Runtime deterministic(std::uint64_t seed, TimestampMs start = 0, TimestampMs step_ms = 0);
};

}  // namespace knowpilot
