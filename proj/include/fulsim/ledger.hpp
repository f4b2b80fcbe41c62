#pragma once

// Tamper-evident audit trail. A single writer appends hash-chained entries;
// models are kept off-chain in a content-addressed checkpoint store and
// referenced from entries by digest.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fulsim/digest.hpp"
#include "fulsim/errors.hpp"
#include "fulsim/learning.hpp"

namespace fulsim {

enum class EventType {
  kRequestSubmitted,
  kConsensusReached,
  kUnlearningExecuted,
  kAggregated,
  kProofRecorded,
  kVerificationCompleted,
  kRequestRevoked,
  kRestored,
};

inline constexpr std::array<std::string_view, 8> kEventNames = {
    "RequestSubmitted", "ConsensusReached",      "UnlearningExecuted", "Aggregated",
    "ProofRecorded",    "VerificationCompleted", "RequestRevoked",     "Restored"};

inline std::string_view to_string(EventType e) { return kEventNames[static_cast<std::size_t>(e)]; }

inline std::optional<EventType> parse_event_type(std::string_view s) {
  for (std::size_t i = 0; i < kEventNames.size(); ++i) {
    if (kEventNames[i] == s) return static_cast<EventType>(i);
  }
  return std::nullopt;
}

using Payload = std::map<std::string, std::string>;

/// Payload keys whose values name a model snapshot in the checkpoint store.
inline const std::set<std::string>& model_reference_keys() {
  static const std::set<std::string> keys = {"pre_model_digest", "post_model_digest",
                                             "global_model_digest", "restored_model_digest",
                                             "input.pre_params", "output_digest"};
  return keys;
}

struct LedgerEntry {
  std::uint64_t index = 0;
  double sim_timestamp = 0.0;
  EventType event_type = EventType::kRequestSubmitted;
  Payload payload;
  std::string payload_digest;
  std::string prev_hash;
  std::string entry_hash;

  bool operator==(const LedgerEntry&) const = default;
};

/// H(prev_hash ‖ canonical(payload) ‖ index ‖ event_type ‖ sim_timestamp).
inline std::string compute_entry_hash(const std::string& prev_hash, const Payload& payload,
                                      std::uint64_t index, EventType type, double sim_timestamp) {
  ByteWriter w;
  w.raw(prev_hash);
  w.raw(canonical_bytes(payload));
  w.u64(index);
  w.str(to_string(type));
  w.f64(sim_timestamp);
  return digest(w.bytes());
}

// ---------------------------------------------------------------------------
// Line format: one compact JSON object per entry, keys in lexicographic
// order, terminated by '\n'. A line is only accepted if re-serializing the
// parsed entry reproduces it byte for byte.

inline std::string serialize_entry(const LedgerEntry& e) {
  nlohmann::json j;
  j["index"] = e.index;
  j["sim_timestamp"] = e.sim_timestamp;
  j["event_type"] = std::string(to_string(e.event_type));
  j["payload"] = e.payload;
  j["payload_digest"] = e.payload_digest;
  j["prev_hash"] = e.prev_hash;
  j["entry_hash"] = e.entry_hash;
  return j.dump();
}

/// Strict parse of one line; nullopt when malformed or non-canonical.
inline std::optional<LedgerEntry> parse_entry(std::string_view line) {
  auto j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (!j.is_object() || j.size() != 7) return std::nullopt;
  const auto field = [&](const char* key) -> nlohmann::json* {
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
  };
  auto* index = field("index");
  auto* ts = field("sim_timestamp");
  auto* type = field("event_type");
  auto* payload = field("payload");
  auto* payload_digest = field("payload_digest");
  auto* prev_hash = field("prev_hash");
  auto* entry_hash = field("entry_hash");
  // Seven distinct known keys in a seven-key object: no unknown keys remain.
  if (!index || !index->is_number_unsigned() || !ts || !ts->is_number_float() || !type ||
      !type->is_string() || !payload || !payload->is_object() || !payload_digest ||
      !payload_digest->is_string() || !prev_hash || !prev_hash->is_string() || !entry_hash ||
      !entry_hash->is_string()) {
    return std::nullopt;
  }
  // Keys are sorted and the timestamp is a float, so the parsed document
  // dumps exactly as serialize_entry would.
  if (j.dump() != line) return std::nullopt;
  LedgerEntry e;
  e.index = index->get<std::uint64_t>();
  e.sim_timestamp = ts->get<double>();
  if (!std::isfinite(e.sim_timestamp)) return std::nullopt;
  const auto event = parse_event_type(type->get_ref<const std::string&>());
  if (!event) return std::nullopt;
  e.event_type = *event;
  for (auto& [k, v] : payload->items()) {
    if (!v.is_string()) return std::nullopt;
    e.payload.emplace(k, std::move(v.get_ref<std::string&>()));
  }
  e.payload_digest = std::move(payload_digest->get_ref<std::string&>());
  e.prev_hash = std::move(prev_hash->get_ref<std::string&>());
  e.entry_hash = std::move(entry_hash->get_ref<std::string&>());
  return e;
}

/// Parsed ledger file. `bad_lines` lists 0-based line numbers that failed
/// to parse; `entries` holds the rest, in file order.
struct ParsedLedger {
  std::vector<LedgerEntry> entries;
  std::vector<std::size_t> bad_lines;
  std::size_t line_count = 0;
};

inline ParsedLedger parse_ledger(std::string_view text) {
  ParsedLedger out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const std::size_t line_no = out.line_count++;
    if (nl == std::string_view::npos) {
      out.bad_lines.push_back(line_no);  // unterminated final line
      break;
    }
    if (auto e = parse_entry(text.substr(pos, nl - pos))) {
      out.entries.push_back(std::move(*e));
    } else {
      out.bad_lines.push_back(line_no);
    }
    pos = nl + 1;
  }
  return out;
}

struct ChainStatus {
  bool valid = true;
  std::size_t broken_at = 0;  // meaningful only when !valid
  std::string reason;

  static ChainStatus ok() { return {}; }
  static ChainStatus broken(std::size_t at, std::string why) { return {false, at, std::move(why)}; }
};

namespace detail {

/// Checks entry i against the running chain state and advances it.
inline std::optional<ChainStatus> check_link(const LedgerEntry& e, std::size_t i, std::string& expected_prev,
                                             double& last_ts) {
  if (e.index != i) return ChainStatus::broken(i, "index out of sequence");
  if (e.prev_hash != expected_prev) return ChainStatus::broken(i, "prev_hash does not link");
  if (i > 0 && e.sim_timestamp < last_ts) return ChainStatus::broken(i, "timestamp regression");
  if (e.payload_digest != digest(canonical_bytes(e.payload))) {
    return ChainStatus::broken(i, "payload digest mismatch");
  }
  if (e.entry_hash != compute_entry_hash(e.prev_hash, e.payload, e.index, e.event_type, e.sim_timestamp)) {
    return ChainStatus::broken(i, "entry hash mismatch");
  }
  expected_prev = e.entry_hash;
  last_ts = e.sim_timestamp;
  return std::nullopt;
}

}  // namespace detail

/// Recomputes every hash and link; reports the first violated index.
inline ChainStatus verify_chain(std::span<const LedgerEntry> entries) {
  std::string expected_prev = zero_digest();
  double last_ts = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (auto broken = detail::check_link(entries[i], i, expected_prev, last_ts)) return *broken;
  }
  return ChainStatus::ok();
}

/// Chain check over the serialized form, stopping at the first violation. A
/// malformed or unterminated line counts as a break at that line.
inline ChainStatus verify_chain(std::string_view serialized) {
  std::string expected_prev = zero_digest();
  double last_ts = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; pos < serialized.size(); ++i) {
    const auto nl = serialized.find('\n', pos);
    if (nl == std::string_view::npos) return ChainStatus::broken(i, "malformed ledger line");
    const auto e = parse_entry(serialized.substr(pos, nl - pos));
    if (!e) return ChainStatus::broken(i, "malformed ledger line");
    if (auto broken = detail::check_link(*e, i, expected_prev, last_ts)) return *broken;
    pos = nl + 1;
  }
  return ChainStatus::ok();
}

/// Append-only hash chain with a single writer. When bound to a file every
/// append is also written there as one line.
class Ledger {
 public:
  Ledger() = default;
  explicit Ledger(std::filesystem::path file) : file_(std::move(file)) {
    std::ofstream(*file_, std::ios::binary | std::ios::trunc);
  }

  const LedgerEntry& append(EventType type, Payload payload, double sim_timestamp) {
    std::lock_guard lock(mu_);
    detail::require(std::isfinite(sim_timestamp), "ledger timestamp must be finite");
    if (!entries_.empty() && sim_timestamp < entries_.back().sim_timestamp) {
      throw InvalidArgument("ledger timestamp regression");
    }
    LedgerEntry e;
    e.index = entries_.size();
    e.sim_timestamp = sim_timestamp;
    e.event_type = type;
    e.payload = std::move(payload);
    e.payload_digest = digest(canonical_bytes(e.payload));
    e.prev_hash = entries_.empty() ? zero_digest() : entries_.back().entry_hash;
    e.entry_hash = compute_entry_hash(e.prev_hash, e.payload, e.index, e.event_type, e.sim_timestamp);
    if (file_) {
      std::ofstream out(*file_, std::ios::binary | std::ios::app);
      out << serialize_entry(e) << '\n';
      if (!out) throw Error("cannot append to ledger file " + file_->string());
    }
    entries_.push_back(std::move(e));
    return entries_.back();
  }

  std::span<const LedgerEntry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const std::string& head_hash() const {
    return entries_.empty() ? zero_digest() : entries_.back().entry_hash;
  }
  const std::optional<std::filesystem::path>& file() const { return file_; }

  std::string serialize() const {
    std::string out;
    for (const auto& e : entries_) out += serialize_entry(e) + '\n';
    return out;
  }

 private:
  std::optional<std::filesystem::path> file_;
  std::vector<LedgerEntry> entries_;
  mutable std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Off-chain snapshots

/// Content-addressed model snapshots. In-memory by default; with a directory
/// each blob lives in `<dir>/<digest>` and is re-read (and re-hashed) on
/// every load.
class CheckpointStore {
 public:
  CheckpointStore() = default;
  explicit CheckpointStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(*dir_);
  }

  std::string store(const ModelParams& params) {
    const Bytes blob = canonical_bytes(params);
    const std::string key = digest(blob);
    std::unique_lock lock(mu_);
    if (dir_) {
      const auto path = *dir_ / key;
      if (!std::filesystem::exists(path)) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
        if (!out) throw Error("cannot write checkpoint " + path.string());
      }
    } else {
      blobs_.emplace(key, blob);
    }
    return key;
  }

  /// Throws NotFound for an unknown digest and IntegrityError when the blob
  /// no longer hashes to its key.
  ModelParams load(const std::string& key) const {
    const Bytes blob = read_blob(key);
    if (digest(blob) != key) throw IntegrityError("checkpoint " + key + " fails digest check");
    return params_from_bytes(blob);
  }

  bool contains(const std::string& key) const {
    std::shared_lock lock(mu_);
    if (dir_) return std::filesystem::exists(*dir_ / key);
    return blobs_.count(key) > 0;
  }

  /// True when the blob exists and re-hashes to its key.
  bool verify(const std::string& key) const {
    try {
      return digest(read_blob(key)) == key;
    } catch (const Error&) {
      return false;
    }
  }

  bool erase(const std::string& key) {
    std::unique_lock lock(mu_);
    if (dir_) return std::filesystem::remove(*dir_ / key);
    return blobs_.erase(key) > 0;
  }

  const std::optional<std::filesystem::path>& directory() const { return dir_; }

 private:
  Bytes read_blob(const std::string& key) const {
    std::shared_lock lock(mu_);
    if (dir_) {
      if (!is_digest_hex(key)) throw NotFound("checkpoint " + key + " not found");
      const auto path = *dir_ / key;
      std::ifstream in(path, std::ios::binary);
      if (!in) throw NotFound("checkpoint " + key + " not found");
      return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    auto it = blobs_.find(key);
    if (it == blobs_.end()) throw NotFound("checkpoint " + key + " not found");
    return it->second;
  }

  std::optional<std::filesystem::path> dir_;
  std::map<std::string, Bytes> blobs_;
  mutable std::shared_mutex mu_;
};

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fulsim
