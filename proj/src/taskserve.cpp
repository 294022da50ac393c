#include "proofkit/taskserve.hpp"

#include <png.h>

#include <algorithm>
#include <ctime>
#include <filesystem>

#include "httplib.h"
#include "json.hpp"
#include "proofkit/common.hpp"

namespace proofkit {

using nlohmann::ordered_json;

std::vector<std::pair<int64_t, int64_t>> rle_encode(const std::vector<uint8_t>& mask) {
  std::vector<std::pair<int64_t, int64_t>> runs;
  const auto n = static_cast<int64_t>(mask.size());
  for (int64_t i = 0; i < n;) {
    if (!mask[i]) {
      ++i;
      continue;
    }
    int64_t j = i;
    while (j < n && mask[j]) ++j;
    runs.emplace_back(i, j - i);
    i = j;
  }
  return runs;
}

std::vector<uint8_t> rle_decode(const std::vector<std::pair<int64_t, int64_t>>& runs, size_t n) {
  std::vector<uint8_t> mask(n, 0);
  for (const auto& [start, len] : runs) {
    if (start < 0 || len < 0 || static_cast<size_t>(start + len) > n) throw Error("format", "RLE run out of range");
    std::fill(mask.begin() + start, mask.begin() + start + len, 1);
  }
  return mask;
}

SliceView make_slice(const EvidenceTensor& t, char axis, int64_t index) {
  if (axis != 'x' && axis != 'y' && axis != 'z') throw Error("out_of_range", std::string("axis must be x, y or z"));
  if (index < 0 || index >= t.edge)
    throw Error("out_of_range", "slice index " + std::to_string(index) + " outside [0," + std::to_string(t.edge) + ")");
  SliceView s;
  s.axis = axis;
  s.index = index;
  s.width = s.height = t.edge;
  const size_t n = static_cast<size_t>(t.edge * t.edge);
  s.gray.resize(n);
  std::vector<uint8_t> ma(n), mb(n), syn(n);
  for (int64_t v = 0; v < t.edge; ++v)
    for (int64_t u = 0; u < t.edge; ++u) {
      int64_t x, y, z;
      if (axis == 'z') x = u, y = v, z = index;
      else if (axis == 'y') x = u, y = index, z = v;
      else x = index, y = u, z = v;
      const size_t p = static_cast<size_t>(u + t.edge * v);
      // Channel 0 holds g/255 for integer g, so rounding recovers g exactly.
      s.gray[p] = static_cast<uint8_t>(std::lround(t.at(0, x, y, z) * 255.0f));
      ma[p] = t.at(1, x, y, z) > 0.5f;
      mb[p] = t.at(2, x, y, z) > 0.5f;
      syn[p] = t.at(3, x, y, z) > 0.5f;
    }
  s.mask_a = rle_encode(ma);
  s.mask_b = rle_encode(mb);
  s.synapse = rle_encode(syn);
  return s;
}

std::string encode_png_gray(const std::vector<uint8_t>& pixels, int64_t width, int64_t height) {
  if (static_cast<int64_t>(pixels.size()) != width * height) throw Error("invalid_argument", "pixel count mismatch");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("internal", "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::string out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw Error("internal", "PNG encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t len) {
        static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), len);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int64_t r = 0; r < height; ++r) png_write_row(png, pixels.data() + r * width);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

TaskService::TaskService(std::vector<MergeCandidate> candidates, DecisionLog& log, BodyState bodies,
                         EvidenceFn evidence, TaskServiceOptions options)
    : candidates_(std::move(candidates)),
      log_(log),
      evidence_(std::move(evidence)),
      options_(std::move(options)),
      bodies_(std::move(bodies)) {
  auto fusion = [](const MergeCandidate& c) {
    auto it = c.scores.find("fusion");
    return it == c.scores.end() ? 0.0 : it->second;
  };
  std::stable_sort(candidates_.begin(), candidates_.end(), [&](const auto& x, const auto& y) {
    if (fusion(x) != fusion(y)) return fusion(x) > fusion(y);
    return x.id < y.id;
  });
  for (size_t i = 0; i < candidates_.size(); ++i)
    if (!by_id_.emplace(candidates_[i].id, i).second) throw Error("invalid_argument", "duplicate candidate " + candidates_[i].id);
  // Merges already in the log are reflected in the starting body state.
  for (const auto& d : log_.entries()) {
    auto it = by_id_.find(d.candidate_id);
    if (it == by_id_.end()) throw Error("unknown_candidate", "log references unknown candidate " + d.candidate_id);
    if (d.verdict == Verdict::merge) bodies_.unite(candidates_[it->second].edge.a, candidates_[it->second].edge.b);
  }
}

void TaskService::set_labels(std::map<std::string, int> labels) {
  std::lock_guard lock(mu_);
  labels_ = std::move(labels);
}

const MergeCandidate& TaskService::candidate(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw Error("unknown_candidate", "unknown candidate " + id);
  return candidates_[it->second];
}

void TaskService::expire_locked(SysClock::time_point now) {
  std::erase_if(leases_, [&](const auto& kv) { return kv.second.expires_at <= now; });
}

std::optional<Task> TaskService::next_task(Workflow workflow, const std::string& reviewer) {
  if (reviewer.empty()) throw Error("invalid_argument", "reviewer is required");
  std::lock_guard lock(mu_);
  const auto now = options_.clock();
  expire_locked(now);
  // Re-polling renews the reviewer's current lease.
  for (auto& [id, lease] : leases_) {
    const auto& c = candidates_[by_id_.at(id)];
    if (lease.holder == reviewer && c.workflow == workflow && !log_.find(id)) {
      lease.expires_at = now + options_.lease_ttl;
      return Task{c, lease};
    }
  }
  for (const auto& c : candidates_) {
    if (c.workflow != workflow || leases_.count(c.id) || log_.find(c.id)) continue;
    TaskLease lease{c.id, reviewer, now + options_.lease_ttl};
    leases_[c.id] = lease;
    return Task{c, lease};
  }
  return std::nullopt;
}

SubmitResult TaskService::submit(const std::string& candidate_id, Verdict verdict, const std::string& reviewer) {
  if (reviewer.empty()) throw Error("invalid_argument", "reviewer is required");
  std::lock_guard lock(mu_);
  const auto& c = candidate(candidate_id);
  if (auto prior = log_.find(candidate_id)) return {prior->sequence, true};
  const auto now = options_.clock();
  expire_locked(now);
  if (auto it = leases_.find(candidate_id); it != leases_.end() && it->second.holder != reviewer)
    throw Error("lease_conflict", "candidate " + candidate_id + " is leased by " + it->second.holder);
  const auto r = log_.append(candidate_id, verdict, "human:" + reviewer, format_utc(now));
  leases_.erase(candidate_id);
  if (r.inserted && verdict == Verdict::merge) bodies_.unite(c.edge.a, c.edge.b);
  return {r.decision.sequence, !r.inserted};
}

SliceView TaskService::slice(const std::string& candidate_id, char axis, std::optional<int64_t> index) const {
  const auto& c = candidate(candidate_id);
  const EvidenceTensor t = evidence_(c);
  return make_slice(t, axis, index.value_or(t.edge / 2));
}

QueueStats TaskService::stats() const {
  std::lock_guard lock(mu_);
  QueueStats s;
  s.total = static_cast<int64_t>(candidates_.size());
  for (const auto& d : log_.entries()) {
    ++s.decided;
    if (d.verdict == Verdict::merge) ++s.merges;
    else if (d.verdict == Verdict::no_merge) ++s.no_merges;
    else ++s.indeterminate;
  }
  s.pending = s.total - s.decided;
  if (s.decided) s.merge_rate = static_cast<double>(s.merges) / static_cast<double>(s.decided);
  return s;
}

std::optional<PrCurve> TaskService::eval_pr() const {
  std::lock_guard lock(mu_);
  if (labels_.empty()) return std::nullopt;
  std::vector<std::pair<double, int>> scored;
  for (const auto& c : candidates_) {
    auto l = labels_.find(c.id);
    auto s = c.scores.find("fusion");
    if (l != labels_.end() && s != c.scores.end()) scored.emplace_back(s->second, l->second);
  }
  bool any = std::any_of(scored.begin(), scored.end(), [](const auto& p) { return p.second == 1; });
  if (!any) return std::nullopt;
  return pr_curve(scored);
}

BodyState TaskService::bodies() const {
  std::lock_guard lock(mu_);
  return bodies_;
}

std::vector<TaskLease> TaskService::active_leases() const {
  std::lock_guard lock(mu_);
  const auto now = options_.clock();
  std::vector<TaskLease> out;
  for (const auto& [id, l] : leases_)
    if (l.expires_at > now) out.push_back(l);
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.candidate_id < y.candidate_id; });
  return out;
}

std::string format_utc(SysClock::time_point t) {
  const std::time_t tt = SysClock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string task_to_json(const std::optional<Task>& task) {
  ordered_json j;
  if (!task) {
    j["task"] = nullptr;
    return j.dump();
  }
  j["task"] = ordered_json::parse(candidate_to_json(task->candidate));
  j["lease"] = {{"candidate_id", task->lease.candidate_id},
                {"holder", task->lease.holder},
                {"expires_at", format_utc(task->lease.expires_at)}};
  return j.dump();
}

std::string stats_to_json(const QueueStats& s) {
  ordered_json j;
  j["total"] = s.total;
  j["decided"] = s.decided;
  j["pending"] = s.pending;
  j["merges"] = s.merges;
  j["no_merges"] = s.no_merges;
  j["indeterminate"] = s.indeterminate;
  j["merge_rate"] = s.merge_rate ? ordered_json(*s.merge_rate) : ordered_json(nullptr);
  return j.dump();
}

std::string slice_to_json(const SliceView& s, const std::string& candidate_id) {
  auto runs = [](const std::vector<std::pair<int64_t, int64_t>>& r) {
    ordered_json a = ordered_json::array();
    for (const auto& [start, len] : r) a.push_back({start, len});
    return a;
  };
  ordered_json j;
  j["candidate_id"] = candidate_id;
  j["axis"] = std::string(1, s.axis);
  j["index"] = s.index;
  j["width"] = s.width;
  j["height"] = s.height;
  j["image"] = "/api/candidates/" + candidate_id + "/slices?axis=" + std::string(1, s.axis) +
               "&index=" + std::to_string(s.index) + "&format=png";
  j["mask_a"] = runs(s.mask_a);
  j["mask_b"] = runs(s.mask_b);
  j["synapse"] = runs(s.synapse);
  return j.dump();
}

namespace {

int http_status(const std::string& code) {
  if (code == "unknown_candidate") return 404;
  if (code == "lease_conflict") return 409;
  if (code == "invalid_argument" || code == "out_of_range") return 400;
  return 500;
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  ordered_json j;
  j["error"] = {{"code", code}, {"message", message}};
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    send_error(res, http_status(e.code()), e.code(), e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

}  // namespace

struct TaskServer::Impl {
  httplib::Server server;
};

TaskServer::TaskServer(TaskService& service, std::string static_dir) : impl_(std::make_unique<Impl>()) {
  auto& srv = impl_->server;
  srv.Get("/api/tasks/next", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const Workflow wf = parse_workflow(req.has_param("workflow") ? req.get_param_value("workflow") : "focused");
      const auto task = service.next_task(wf, req.get_param_value("reviewer"));
      res.set_content(task_to_json(task), "application/json");
    });
  });
  srv.Post(R"(/api/tasks/([^/]+)/decision)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const std::exception&) {
        throw Error("invalid_argument", "request body is not JSON");
      }
      if (!body.is_object() || !body.contains("verdict") || !body.contains("reviewer") ||
          !body["verdict"].is_string() || !body["reviewer"].is_string())
        throw Error("invalid_argument", "body must be {\"verdict\": ..., \"reviewer\": ...}");
      const auto r = service.submit(req.matches[1], parse_verdict(body["verdict"].get<std::string>()),
                                    body["reviewer"].get<std::string>());
      ordered_json j;
      j["candidate_id"] = std::string(req.matches[1]);
      j["sequence"] = r.sequence;
      j["duplicate"] = r.duplicate;
      res.set_content(j.dump(), "application/json");
    });
  });
  srv.Get(R"(/api/candidates/([^/]+)/slices)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string axis = req.has_param("axis") ? req.get_param_value("axis") : "z";
      if (axis.size() != 1) throw Error("out_of_range", "axis must be x, y or z");
      const std::string id = req.matches[1];
      std::optional<int64_t> index;
      if (req.has_param("index")) {
        try {
          index = std::stoll(req.get_param_value("index"));
        } catch (const std::exception&) {
          throw Error("out_of_range", "index must be an integer");
        }
      }
      const SliceView s = service.slice(id, axis[0], index);
      if (req.get_param_value("format") == "png")
        res.set_content(encode_png_gray(s.gray, s.width, s.height), "image/png");
      else
        res.set_content(slice_to_json(s, id), "application/json");
    });
  });
  srv.Get("/api/stats", [&service](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { res.set_content(stats_to_json(service.stats()), "application/json"); });
  });
  srv.Get("/api/eval/pr", [&service](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      ordered_json j;
      const auto pr = service.eval_pr();
      j["available"] = pr.has_value();
      if (pr) {
        j["auprc"] = pr->auprc;
        j["positives"] = pr->positives;
        ordered_json pts = ordered_json::array();
        for (const auto& p : pr->points)
          pts.push_back({{"threshold", p.threshold}, {"precision", p.precision}, {"recall", p.recall}});
        j["points"] = pts;
      }
      res.set_content(j.dump(), "application/json");
    });
  });
  if (!static_dir.empty()) {
    if (!std::filesystem::is_directory(static_dir)) throw Error("io", "static dir " + static_dir + " not found");
    srv.set_mount_point("/", static_dir);
  }
}

TaskServer::~TaskServer() { stop(); }

int TaskServer::bind(const std::string& host, int port) {
  int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("io", "cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void TaskServer::listen() { impl_->server.listen_after_bind(); }

void TaskServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace proofkit
