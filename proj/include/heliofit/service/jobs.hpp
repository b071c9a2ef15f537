#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "heliofit/fitter.hpp"

namespace heliofit::service {

enum class JobState { queued, running, done, failed };

std::string_view to_string(JobState s);
/// Throws std::invalid_argument.
JobState job_state_from_string(std::string_view s);

struct JobRecord {
  std::string id;
  std::string kind = "fit";
  JobState state = JobState::queued;
  std::string submitted_at;  ///< UTC, "YYYY-MM-DDTHH:MM:SSZ"
  FitMetadata meta;
  std::optional<FitResult> result;
  std::string error;
};

/// Job records plus their uploaded inputs. With a data directory every
/// change is written through to <dir>/jobs.jsonl (atomic replace) and
/// uploads go to <dir>/uploads/<id>.bin; on load, jobs that were running
/// become failed and queued jobs stay queued.
class JobStore {
 public:
  explicit JobStore(std::filesystem::path data_dir = {});

  std::string create(std::string input, const FitMetadata& meta);
  std::optional<JobRecord> get(const std::string& id) const;
  /// Raw bytes of the upload. Throws std::out_of_range for unknown ids.
  std::string input(const std::string& id) const;

  /// Only queued -> running -> {done, failed}; anything else throws std::logic_error.
  void mark_running(const std::string& id);
  void mark_done(const std::string& id, const FitResult& result);
  void mark_failed(const std::string& id, const std::string& error);

  /// Ids of queued jobs in submission order.
  std::vector<std::string> queued() const;
  std::size_t size() const;
  bool persistent() const { return !dir_.empty(); }

 private:
  void transition(const std::string& id, JobState from, JobState to, const std::function<void(JobRecord&)>& edit);
  void persist_locked() const;
  void load();

  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, JobRecord> jobs_;
  std::vector<std::string> order_;
  std::map<std::string, std::string> inputs_;  // memory mode only
  std::uint64_t next_ = 1;
};

class QueueFull : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Single consumer that runs queued jobs one at a time in submission order.
class JobQueue {
 public:
  using Runner = std::function<FitResult(const JobRecord& job, const std::string& input)>;

  /// Picks up jobs left queued in the store.
  JobQueue(JobStore& store, Runner runner, std::size_t depth);
  ~JobQueue();
  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  /// Throws QueueFull when `depth` jobs are already waiting.
  std::string submit(std::string input, const FitMetadata& meta);
  /// Blocks until nothing is queued or running.
  void wait_idle();

 private:
  void loop(std::stop_token stop);

  JobStore& store_;
  Runner runner_;
  std::size_t depth_;
  std::mutex mutex_;
  std::condition_variable_any cv_;
  std::condition_variable idle_cv_;
  std::deque<std::string> pending_;
  bool busy_ = false;
  std::jthread worker_;
};

std::string utc_now_iso();

}  // namespace heliofit::service
