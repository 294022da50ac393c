#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "proofkit/adjacency.hpp"
#include "proofkit/evalkit.hpp"
#include "proofkit/evidence.hpp"
#include "proofkit/workflow.hpp"

namespace proofkit {

using SysClock = std::chrono::system_clock;

struct TaskLease {
  std::string candidate_id;
  std::string holder;
  SysClock::time_point expires_at;
};

struct Task {
  MergeCandidate candidate;
  TaskLease lease;
};

struct SubmitResult {
  uint64_t sequence = 0;
  bool duplicate = false;
};

struct QueueStats {
  int64_t total = 0;
  int64_t decided = 0;
  int64_t pending = 0;
  int64_t merges = 0;
  int64_t no_merges = 0;
  int64_t indeterminate = 0;
  std::optional<double> merge_rate;  // merges / decided
};

// One slice through a candidate's evidence cube. Masks are run-length encoded
// over the row-major slice as (start, length) pairs.
struct SliceView {
  char axis = 'z';
  int64_t index = 0;
  int64_t width = 0, height = 0;
  std::vector<uint8_t> gray;
  std::vector<std::pair<int64_t, int64_t>> mask_a, mask_b, synapse;
};

std::vector<std::pair<int64_t, int64_t>> rle_encode(const std::vector<uint8_t>& mask);
std::vector<uint8_t> rle_decode(const std::vector<std::pair<int64_t, int64_t>>& runs, size_t n);
// Slice plane coordinates: axis z -> (x, y), y -> (x, z), x -> (y, z).
SliceView make_slice(const EvidenceTensor& t, char axis, int64_t index);
std::string encode_png_gray(const std::vector<uint8_t>& pixels, int64_t width, int64_t height);

struct TaskServiceOptions {
  std::chrono::seconds lease_ttl{300};
  std::function<SysClock::time_point()> clock = [] { return SysClock::now(); };
};

// Queue, leases, decision appends and the incrementally maintained body
// state. Every mutation goes through one mutex, so the decision log sees a
// single writer.
class TaskService {
 public:
  using EvidenceFn = std::function<EvidenceTensor(const MergeCandidate&)>;

  TaskService(std::vector<MergeCandidate> candidates, DecisionLog& log, BodyState bodies, EvidenceFn evidence,
              TaskServiceOptions options = {});

  // Ground-truth labels (candidate id -> 0/1) enable /api/eval/pr.
  void set_labels(std::map<std::string, int> labels);

  std::optional<Task> next_task(Workflow workflow, const std::string& reviewer);
  SubmitResult submit(const std::string& candidate_id, Verdict verdict, const std::string& reviewer);
  // Default index: the center slice.
  SliceView slice(const std::string& candidate_id, char axis, std::optional<int64_t> index) const;
  QueueStats stats() const;
  std::optional<PrCurve> eval_pr() const;

  BodyState bodies() const;
  std::vector<TaskLease> active_leases() const;
  const MergeCandidate& candidate(const std::string& id) const;

 private:
  void expire_locked(SysClock::time_point now);

  std::vector<MergeCandidate> candidates_;  // queue order: fusion desc, id asc
  std::unordered_map<std::string, size_t> by_id_;
  DecisionLog& log_;
  EvidenceFn evidence_;
  TaskServiceOptions options_;
  mutable std::mutex mu_;
  BodyState bodies_;
  std::unordered_map<std::string, TaskLease> leases_;
  std::map<std::string, int> labels_;
};

std::string format_utc(SysClock::time_point t);
std::string task_to_json(const std::optional<Task>& task);
std::string stats_to_json(const QueueStats& s);
std::string slice_to_json(const SliceView& s, const std::string& candidate_id);

// HTTP front end: GET /api/tasks/next, POST /api/tasks/{id}/decision,
// GET /api/candidates/{id}/slices, GET /api/stats, GET /api/eval/pr.
class TaskServer {
 public:
  explicit TaskServer(TaskService& service, std::string static_dir = "");
  ~TaskServer();
  TaskServer(const TaskServer&) = delete;
  TaskServer& operator=(const TaskServer&) = delete;

  // port 0 binds an ephemeral port; returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace proofkit
