#include "farmlight/edge/telemetry_log.h"

#include <cstdio>

#include "farmlight/errors.h"

namespace farmlight::edge {

namespace {

std::string batch_name(const std::string& edge_id, std::uint64_t n) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "-b%06llu", static_cast<unsigned long long>(n));
  return edge_id + buf;
}

}  // namespace

TelemetryLog::TelemetryLog(std::string edge_id, std::optional<std::filesystem::path> file)
    : edge_id_(std::move(edge_id)), path_(std::move(file)) {
  if (!path_) return;
  if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
  std::size_t valid = 0;
  if (std::filesystem::exists(*path_)) {
    Bytes data = read_file(*path_);
    while (valid + 4 <= data.size()) {
      std::uint32_t len = get_u32_be(data.data() + valid);
      if (len > data.size() - valid - 4) break;
      Json entry;
      try {
        entry = parse_json(as_text(std::span(data).subspan(valid + 4, len)));
      } catch (const FormatError&) {
        break;
      }
      apply(entry);
      valid += 4 + len;
    }
    // A torn final entry (crash mid-append) is cut off; everything before it
    // was fully written.
    if (valid != data.size()) std::filesystem::resize_file(*path_, valid);
  }
  out_.open(*path_, std::ios::binary | std::ios::app);
  if (!out_) throw IoError(path_->string(), "cannot open telemetry log");
}

void TelemetryLog::write_entry(const Json& entry) {
  if (!path_) return;
  std::string text = canonical(entry);
  Bytes framed;
  put_u32_be(framed, static_cast<std::uint32_t>(text.size()));
  framed.insert(framed.end(), text.begin(), text.end());
  out_.write(reinterpret_cast<const char*>(framed.data()), static_cast<std::streamsize>(framed.size()));
  out_.flush();
  if (!out_) throw IoError(path_->string(), "cannot append to telemetry log");
}

void TelemetryLog::apply(const Json& entry) {
  const std::string kind = entry.at("kind").get<std::string>();
  if (kind == "record") {
    const Json& r = entry.at("record");
    std::uint64_t seq = r.at("seq").get<std::uint64_t>();
    records_[seq] = r;
    next_seq_ = std::max(next_seq_, seq + 1);
  } else if (kind == "batch") {
    std::string id = entry.at("batch_id").get<std::string>();
    auto seqs = entry.at("seqs").get<std::vector<std::uint64_t>>();
    for (auto s : seqs) assigned_[s] = id;
    open_[id] = seqs;
    order_.push_back(id);
    next_batch_ = std::max(next_batch_, entry.at("n").get<std::uint64_t>() + 1);
  } else if (kind == "ack") {
    std::string id = entry.at("batch_id").get<std::string>();
    auto it = open_.find(id);
    if (it == open_.end()) return;
    for (auto s : it->second) {
      records_.erase(s);
      assigned_.erase(s);
    }
    open_.erase(it);
  }
}

std::uint64_t TelemetryLog::append(Json record) {
  std::lock_guard lock(mu_);
  std::uint64_t seq = next_seq_;
  record["seq"] = seq;
  Json entry{{"kind", "record"}, {"record", std::move(record)}};
  write_entry(entry);
  apply(entry);
  return seq;
}

std::size_t TelemetryLog::pending() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

std::size_t TelemetryLog::unbatched() const {
  std::lock_guard lock(mu_);
  return records_.size() - assigned_.size();
}

std::uint64_t TelemetryLog::total_appended() const {
  std::lock_guard lock(mu_);
  return next_seq_ - 1;
}

TelemetryLog::Batch TelemetryLog::materialize(const std::string& batch_id) const {
  Batch b{batch_id, open_.at(batch_id), Json::array()};
  for (auto s : b.seqs) b.records.push_back(records_.at(s));
  return b;
}

std::optional<TelemetryLog::Batch> TelemetryLog::open_batch() const {
  std::lock_guard lock(mu_);
  for (const auto& id : order_)
    if (open_.count(id)) return materialize(id);
  return std::nullopt;
}

std::optional<TelemetryLog::Batch> TelemetryLog::form_batch(std::size_t max_records) {
  if (max_records == 0) throw ContractViolation("batch size must be positive");
  std::lock_guard lock(mu_);
  std::vector<std::uint64_t> seqs;
  for (const auto& [seq, _] : records_) {
    if (assigned_.count(seq)) continue;
    seqs.push_back(seq);
    if (seqs.size() == max_records) break;
  }
  if (seqs.empty()) return std::nullopt;
  std::uint64_t n = next_batch_;
  std::string id = batch_name(edge_id_, n);
  Json entry{{"kind", "batch"}, {"batch_id", id}, {"n", n}, {"seqs", seqs}};
  write_entry(entry);
  apply(entry);
  return materialize(id);
}

bool TelemetryLog::ack(const std::string& batch_id) {
  std::lock_guard lock(mu_);
  if (!open_.count(batch_id)) return false;
  Json entry{{"kind", "ack"}, {"batch_id", batch_id}};
  write_entry(entry);
  apply(entry);
  return true;
}

std::vector<std::string> TelemetryLog::batch_ids() const {
  std::lock_guard lock(mu_);
  return order_;
}

}  // namespace farmlight::edge
