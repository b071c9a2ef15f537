#include "heliofit/service/jobs.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "heliofit/hdr_io.hpp"

namespace heliofit::service {

using nlohmann::json;

std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "failed";
}

JobState job_state_from_string(std::string_view s) {
  for (JobState st : {JobState::queued, JobState::running, JobState::done, JobState::failed}) {
    if (s == to_string(st)) return st;
  }
  throw std::invalid_argument("unknown job state '" + std::string(s) + "'");
}

std::string utc_now_iso() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

json meta_to_json(const FitMetadata& m) {
  json j = json::object();
  if (m.sun) j["sun"] = {m.sun->zenith, m.sun->azimuth};
  if (m.latitude_deg) j["latitude_deg"] = *m.latitude_deg;
  if (m.longitude_deg) j["longitude_deg"] = *m.longitude_deg;
  if (m.timestamp_utc) j["timestamp_utc"] = *m.timestamp_utc;
  return j;
}

FitMetadata meta_from_json(const json& j) {
  FitMetadata m;
  if (j.contains("sun")) m.sun = Direction::make(j["sun"].at(0).get<double>(), j["sun"].at(1).get<double>());
  if (j.contains("latitude_deg")) m.latitude_deg = j["latitude_deg"].get<double>();
  if (j.contains("longitude_deg")) m.longitude_deg = j["longitude_deg"].get<double>();
  if (j.contains("timestamp_utc")) m.timestamp_utc = j["timestamp_utc"].get<std::string>();
  return m;
}

json record_to_json(const JobRecord& r) {
  json j;
  j["id"] = r.id;
  j["kind"] = r.kind;
  j["state"] = std::string(to_string(r.state));
  j["submitted_at"] = r.submitted_at;
  j["meta"] = meta_to_json(r.meta);
  j["result"] = r.result ? json::parse(to_jsonl(*r.result)) : json(nullptr);
  j["error"] = r.error.empty() ? json(nullptr) : json(r.error);
  return j;
}

JobRecord record_from_json(const json& j) {
  JobRecord r;
  r.id = j.at("id").get<std::string>();
  r.kind = j.at("kind").get<std::string>();
  r.state = job_state_from_string(j.at("state").get<std::string>());
  r.submitted_at = j.at("submitted_at").get<std::string>();
  r.meta = meta_from_json(j.at("meta"));
  if (!j.at("result").is_null()) r.result = fit_result_from_json(j.at("result").dump());
  if (!j.at("error").is_null()) r.error = j.at("error").get<std::string>();
  return r;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw HdrIoError(HdrIoError::Kind::open_failed, "cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_atomic(const std::filesystem::path& p, const std::string& bytes) {
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw HdrIoError(HdrIoError::Kind::write_failed, "cannot write " + tmp);
    out << bytes;
    if (!out) throw HdrIoError(HdrIoError::Kind::write_failed, "cannot write " + tmp);
  }
  std::filesystem::rename(tmp, p);
}

}  // namespace

JobStore::JobStore(std::filesystem::path data_dir) : dir_(std::move(data_dir)) {
  if (dir_.empty()) return;
  std::filesystem::create_directories(dir_ / "uploads");
  load();
}

void JobStore::load() {
  const auto path = dir_ / "jobs.jsonl";
  if (!std::filesystem::exists(path)) return;
  std::istringstream in(read_file(path));
  std::string line;
  bool changed = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    JobRecord r;
    try {
      r = record_from_json(json::parse(line));
    } catch (const std::exception& e) {
      throw std::runtime_error("corrupt job store " + path.string() + ": " + e.what());
    }
    if (r.state == JobState::running) {
      r.state = JobState::failed;
      r.error = "interrupted by service restart";
      changed = true;
    }
    unsigned long long n = 0;
    if (std::sscanf(r.id.c_str(), "job-%llu", &n) == 1) next_ = std::max<std::uint64_t>(next_, n + 1);
    order_.push_back(r.id);
    jobs_.emplace(r.id, std::move(r));
  }
  if (changed) persist_locked();
}

void JobStore::persist_locked() const {
  if (dir_.empty()) return;
  std::string out;
  for (const auto& id : order_) {
    out += record_to_json(jobs_.at(id)).dump();
    out += '\n';
  }
  write_file_atomic(dir_ / "jobs.jsonl", out);
}

std::string JobStore::create(std::string input, const FitMetadata& meta) {
  std::unique_lock lock(mutex_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "job-%06llu", static_cast<unsigned long long>(next_++));
  JobRecord r;
  r.id = buf;
  r.submitted_at = utc_now_iso();
  r.meta = meta;
  if (dir_.empty()) {
    inputs_[r.id] = std::move(input);
  } else {
    write_file_atomic(dir_ / "uploads" / (r.id + ".bin"), input);
  }
  order_.push_back(r.id);
  jobs_.emplace(r.id, r);
  persist_locked();
  return r.id;
}

std::optional<JobRecord> JobStore::get(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

std::string JobStore::input(const std::string& id) const {
  std::shared_lock lock(mutex_);
  if (!jobs_.count(id)) throw std::out_of_range("unknown job '" + id + "'");
  if (dir_.empty()) return inputs_.at(id);
  return read_file(dir_ / "uploads" / (id + ".bin"));
}

void JobStore::transition(const std::string& id, JobState from, JobState to,
                          const std::function<void(JobRecord&)>& edit) {
  std::unique_lock lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw std::out_of_range("unknown job '" + id + "'");
  if (it->second.state != from) {
    throw std::logic_error("job " + id + " cannot go from " + std::string(to_string(it->second.state)) + " to " +
                           std::string(to_string(to)));
  }
  it->second.state = to;
  if (edit) edit(it->second);
  persist_locked();
}

void JobStore::mark_running(const std::string& id) { transition(id, JobState::queued, JobState::running, {}); }

void JobStore::mark_done(const std::string& id, const FitResult& result) {
  transition(id, JobState::running, JobState::done, [&](JobRecord& r) { r.result = result; });
}

void JobStore::mark_failed(const std::string& id, const std::string& error) {
  transition(id, JobState::running, JobState::failed, [&](JobRecord& r) { r.error = error; });
}

std::vector<std::string> JobStore::queued() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& id : order_) {
    if (jobs_.at(id).state == JobState::queued) out.push_back(id);
  }
  return out;
}

std::size_t JobStore::size() const {
  std::shared_lock lock(mutex_);
  return jobs_.size();
}

// ---------------------------------------------------------------------------

JobQueue::JobQueue(JobStore& store, Runner runner, std::size_t depth)
    : store_(store), runner_(std::move(runner)), depth_(depth) {
  for (auto& id : store_.queued()) pending_.push_back(std::move(id));
  worker_ = std::jthread([this](std::stop_token st) { loop(st); });
}

JobQueue::~JobQueue() {
  worker_.request_stop();
  cv_.notify_all();
}

std::string JobQueue::submit(std::string input, const FitMetadata& meta) {
  std::unique_lock lock(mutex_);
  if (pending_.size() >= depth_) throw QueueFull("job queue is full");
  std::string id = store_.create(std::move(input), meta);
  pending_.push_back(id);
  lock.unlock();
  cv_.notify_one();
  return id;
}

void JobQueue::wait_idle() {
  std::unique_lock lock(mutex_);
  idle_cv_.wait(lock, [this] { return pending_.empty() && !busy_; });
}

void JobQueue::loop(std::stop_token stop) {
  while (true) {
    std::string id;
    {
      std::unique_lock lock(mutex_);
      if (!cv_.wait(lock, stop, [this] { return !pending_.empty(); })) return;
      id = pending_.front();
      pending_.pop_front();
      busy_ = true;
    }
    try {
      store_.mark_running(id);
      const JobRecord job = *store_.get(id);
      try {
        store_.mark_done(id, runner_(job, store_.input(id)));
      } catch (const std::exception& e) {
        store_.mark_failed(id, e.what());
      }
    } catch (const std::exception&) {
      // The record vanished or was already finished; nothing left to report.
    }
    {
      std::lock_guard lock(mutex_);
      busy_ = false;
    }
    idle_cv_.notify_all();
  }
}

}  // namespace heliofit::service
