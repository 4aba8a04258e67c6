#include "farmlight/netproto/cloud.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "farmlight/digest.h"
#include "farmlight/errors.h"
#include "farmlight/model.h"

namespace farmlight::net {

std::uint32_t RegistryEntry::chunk_count() const {
  return static_cast<std::uint32_t>((bytes.size() + kChunkSize - 1) / kChunkSize);
}

ModelManifest RegistryEntry::manifest() const {
  return ModelManifest{version_id, bytes.size(), kChunkSize, chunk_count(), sha256_hex};
}

Bytes RegistryEntry::chunk(std::uint32_t index) const {
  if (index >= chunk_count()) throw ContractViolation("chunk index out of range");
  std::size_t begin = static_cast<std::size_t>(index) * kChunkSize;
  std::size_t end = std::min(bytes.size(), begin + kChunkSize);
  return Bytes(bytes.begin() + static_cast<std::ptrdiff_t>(begin),
               bytes.begin() + static_cast<std::ptrdiff_t>(end));
}

namespace {

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  out << line << '\n';
  out.flush();
  if (!out) throw IoError(path.string(), "cannot append");
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  if (!std::filesystem::exists(path)) return lines;
  Bytes data = read_file(path);
  std::istringstream in{std::string(as_text(data))};
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(line);
  return lines;
}

}  // namespace

Registry::Registry(std::optional<std::filesystem::path> dir) : dir_(std::move(dir)) {
  if (!dir_) return;
  std::filesystem::create_directories(*dir_);
  for (const auto& line : read_lines(*dir_ / "index.ndjson")) {
    Json j = parse_json(line);
    auto e = std::make_shared<RegistryEntry>();
    e->version_id = j.at("version_id").get<std::string>();
    e->published_ms = j.at("published_ms").get<std::int64_t>();
    e->stage = j.at("stage").get<std::string>();
    e->bytes = read_file(*dir_ / (e->version_id + ".flsm"));
    model::load(e->bytes);
    e->sha256_hex = to_hex(sha256(e->bytes));
    if (e->sha256_hex != j.at("sha256_hex").get<std::string>())
      throw IntegrityError("registry artifact " + e->version_id + " does not match its index");
    entries_.push_back(std::move(e));
  }
}

std::shared_ptr<const RegistryEntry> Registry::publish(Bytes artifact, std::int64_t now_ms) {
  model::Artifact loaded = model::load(artifact);
  auto e = std::make_shared<RegistryEntry>();
  e->version_id = loaded.meta.version_id;
  e->stage = loaded.meta.stage;
  e->published_ms = now_ms;
  e->sha256_hex = to_hex(sha256(artifact));
  e->bytes = std::move(artifact);

  std::lock_guard lock(mu_);
  for (const auto& existing : entries_)
    if (existing->version_id == e->version_id)
      throw Conflict("version " + e->version_id + " is already published");
  if (dir_) {
    write_file(*dir_ / (e->version_id + ".flsm"), e->bytes);
    append_line(*dir_ / "index.ndjson", canonical(Json{{"version_id", e->version_id},
                                                        {"published_ms", e->published_ms},
                                                        {"stage", e->stage},
                                                        {"sha256_hex", e->sha256_hex}}));
  }
  entries_.push_back(e);
  return e;
}

std::shared_ptr<const RegistryEntry> Registry::newest() const {
  std::lock_guard lock(mu_);
  return entries_.empty() ? nullptr : entries_.back();
}

std::shared_ptr<const RegistryEntry> Registry::find(const std::string& version_id) const {
  std::lock_guard lock(mu_);
  for (const auto& e : entries_)
    if (e->version_id == version_id) return e;
  return nullptr;
}

std::size_t Registry::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

bool valid_node_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
           c == '-' || c == '.';
  }) && id != "." && id != "..";
}

TelemetryStore::TelemetryStore(std::optional<std::filesystem::path> dir) : dir_(std::move(dir)) {
  if (!dir_) return;
  std::filesystem::create_directories(*dir_);
  for (const auto& file : std::filesystem::directory_iterator(*dir_)) {
    if (file.path().extension() != ".ndjson") continue;
    std::string edge_id = file.path().stem().string();
    for (const auto& line : read_lines(file.path())) {
      Json j = parse_json(line);
      keys_.insert({edge_id, j.at("batch_id").get<std::string>()});
      records_[edge_id].push_back(j.at("record"));
    }
  }
}

bool TelemetryStore::store(const std::string& edge_id, const std::string& batch_id,
                           const Json& records) {
  if (!valid_node_id(edge_id)) throw ContractViolation("invalid edge id '" + edge_id + "'");
  std::lock_guard lock(mu_);
  if (!keys_.insert({edge_id, batch_id}).second) return false;
  auto& dest = records_[edge_id];
  std::string lines;
  for (const auto& r : records) {
    dest.push_back(r);
    lines += canonical(Json{{"batch_id", batch_id}, {"record", r}});
    lines += '\n';
  }
  if (dir_ && !lines.empty()) {
    lines.pop_back();
    append_line(*dir_ / (edge_id + ".ndjson"), lines);
  }
  return true;
}

bool TelemetryStore::contains(const std::string& edge_id, const std::string& batch_id) const {
  std::lock_guard lock(mu_);
  return keys_.count({edge_id, batch_id}) > 0;
}

std::size_t TelemetryStore::batch_count() const {
  std::lock_guard lock(mu_);
  return keys_.size();
}

std::size_t TelemetryStore::record_count() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& [_, v] : records_) n += v.size();
  return n;
}

std::set<std::pair<std::string, std::string>> TelemetryStore::keys() const {
  std::lock_guard lock(mu_);
  return keys_;
}

std::vector<Json> TelemetryStore::records(const std::string& edge_id) const {
  std::lock_guard lock(mu_);
  auto it = records_.find(edge_id);
  return it == records_.end() ? std::vector<Json>{} : it->second;
}

CloudService::CloudService(Registry& registry, TelemetryStore& store)
    : registry_(registry), store_(store) {}

namespace {

ErrorMsg error(std::string code, std::string detail) { return {std::move(code), std::move(detail)}; }

/// Every record needs string obs_id and an unsigned seq.
bool valid_records(const Json& records, std::uint32_t count) {
  if (records.size() != count) return false;
  return std::all_of(records.begin(), records.end(), [](const Json& r) {
    return r.is_object() && r.contains("obs_id") && r["obs_id"].is_string() && r.contains("seq") &&
           r["seq"].is_number_unsigned();
  });
}

}  // namespace

std::vector<Message> CloudService::handle(std::size_t session, const Message& in) {
  if (const auto* hello = std::get_if<Hello>(&in)) {
    if (session < sessions_.size()) sessions_[session].node_id = hello->node_id;
    return {HelloAck{"cloud-s" + std::to_string(session + 1)}};
  }
  if (const auto* batch = std::get_if<TelemetryBatch>(&in)) {
    if (!valid_node_id(batch->edge_id)) return {error("bad_batch", "invalid edge_id")};
    Json records;
    try {
      records = batch->unpack();
    } catch (const Error& e) {
      return {error("bad_batch", e.what())};
    }
    if (!valid_records(records, batch->count))
      return {error("bad_batch", "records do not match the declared count or schema")};
    if (!store_.store(batch->edge_id, batch->batch_id, records)) {
      std::lock_guard lock(mu_);
      ++duplicates_;
    }
    return {BatchAck{batch->batch_id}};
  }
  if (std::holds_alternative<ModelQuery>(in)) {
    auto newest = registry_.newest();
    if (!newest) return {error("no_model", "registry is empty")};
    return {newest->manifest()};
  }
  if (const auto* req = std::get_if<ModelChunkReq>(&in)) {
    auto entry = registry_.find(req->version_id);
    if (!entry) return {error("no_such_version", req->version_id)};
    if (req->index >= entry->chunk_count())
      return {error("bad_index", std::to_string(req->index) + " of " +
                                     std::to_string(entry->chunk_count()))};
    return {ModelChunk{entry->version_id, req->index, entry->chunk(req->index)}};
  }
  if (const auto* alert = std::get_if<AlertMsg>(&in)) {
    std::lock_guard lock(mu_);
    alerts_.push_back(alert->alert);
    return {};
  }
  return {error("unsupported", "cloud does not handle " + to_string(type_of(in)))};
}

std::size_t CloudService::attach(std::shared_ptr<Transport> link) {
  sessions_.push_back(Session{std::move(link), {}, {}, {}});
  return sessions_.size() - 1;
}

void CloudService::poll() {
  for (std::size_t i = 0; i < sessions_.size(); ++i) {
    Session& s = sessions_[i];
    if (!s.link->is_open()) continue;
    s.reader.feed(s.link->receive());
    while (auto item = s.reader.next()) {
      std::vector<Message> replies;
      if (item->error) {
        replies.push_back(error(item->error == DecodeError::length_overflow
                                    ? "oversize"
                                    : to_string(*item->error),
                                "frame rejected"));
      } else {
        DecodeResult d = decode(item->raw);
        if (d.ok())
          replies = handle(i, d.message());
        else
          replies.push_back(error(to_string(d.error()), "frame rejected"));
      }
      for (const auto& r : replies) s.link->send(encode(r));
    }
  }
}

std::vector<edge::Alert> CloudService::alerts() const {
  std::lock_guard lock(mu_);
  return alerts_;
}

std::size_t CloudService::duplicate_batches() const {
  std::lock_guard lock(mu_);
  return duplicates_;
}

}  // namespace farmlight::net
