#include "rsa/persistence.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "rsa/plotdata.hpp"
#include "rsa/prompt.hpp"

namespace rsa {
namespace {

using ojson = nlohmann::ordered_json;

}  // namespace

std::vector<TaskSpec> parse_dataset(std::istream& in, const std::string& source) {
  std::vector<TaskSpec> tasks;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (strip_whitespace(line).empty()) continue;
    TaskSpec task;
    try {
      const auto j = nlohmann::json::parse(line);
      task.id = j.at("id").get<std::string>();
      task.kind = parse_task_kind(j.at("kind").get<std::string>());
      task.query = j.at("query").get<std::string>();
      task.gold = j.value("gold", std::string());
    } catch (const std::exception& e) {
      throw ParseError(source, line_no, e.what());
    }
    if (task.id.empty()) throw ParseError(source, line_no, "empty task id");
    if (!ids.insert(task.id).second) throw ParseError(source, line_no, "duplicate task id '" + task.id + "'");
    tasks.push_back(std::move(task));
  }
  return tasks;
}

std::vector<TaskSpec> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset '" + path.string() + "'");
  return parse_dataset(in, path.string());
}

ojson to_json(const TaskSpec& task) {
  return ojson{{"id", task.id}, {"kind", std::string(to_string(task.kind))}, {"query", task.query}, {"gold", task.gold}};
}

ojson to_json(const StepRecord& r) {
  ojson j;
  j["run_id"] = r.run_id;
  j["seed"] = r.seed;
  j["task_id"] = r.task_id;
  j["step"] = r.step;
  j["member_index"] = r.member_index;
  j["prompt_hash"] = r.prompt_hash;
  j["text"] = r.text;
  j["answer"] = r.answer ? ojson(*r.answer) : ojson(nullptr);
  j["reward"] = r.reward;
  j["parents"] = r.parents;
  j["truncated"] = r.truncated;
  return j;
}

StepRecord step_record_from_json(const nlohmann::json& j) {
  StepRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.task_id = j.at("task_id").get<std::string>();
  r.step = j.at("step").get<int>();
  r.member_index = j.at("member_index").get<int>();
  r.prompt_hash = j.at("prompt_hash").get<std::string>();
  r.text = j.at("text").get<std::string>();
  if (!j.at("answer").is_null()) r.answer = j.at("answer").get<std::string>();
  r.reward = j.at("reward").get<double>();
  r.parents = j.at("parents").get<std::vector<int>>();
  r.truncated = j.at("truncated").get<bool>();
  if (r.step < 1) throw std::invalid_argument("step must be >= 1");
  if (r.member_index < 0) throw std::invalid_argument("member_index must be >= 0");
  return r;
}

std::vector<StepRecord> records_for(const RunState& state, const std::string& run_id) {
  std::vector<StepRecord> out;
  for (const auto& pop : state.populations) {
    for (std::size_t i = 0; i < pop.members.size(); ++i) {
      const Trajectory& t = pop.members[i];
      out.push_back({run_id, state.config.seed, state.task.id, pop.step, static_cast<int>(i), t.prompt_hash, t.text,
                     t.answer, t.reward.value_or(0.0), t.parents, t.truncated});
    }
  }
  return out;
}

void write_jsonl_line(std::ostream& out, const ojson& j) { out << j.dump() << '\n'; }

std::vector<StepRecord> read_step_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open step records '" + path.string() + "'");
  std::vector<StepRecord> records;
  std::set<std::tuple<std::string, std::string, int, int>> keys;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (strip_whitespace(line).empty()) continue;
    StepRecord r;
    try {
      r = step_record_from_json(nlohmann::json::parse(line));
    } catch (const std::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
    if (!keys.emplace(r.run_id, r.task_id, r.step, r.member_index).second) {
      throw ParseError(path.string(), line_no, "duplicate record key");
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<ReplayedRun> group_records(std::span<const StepRecord> records) {
  std::vector<ReplayedRun> runs;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::vector<std::map<int, std::map<int, const StepRecord*>>> steps;
  for (const auto& r : records) {
    const auto key = std::make_pair(r.run_id, r.task_id);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, runs.size()).first;
      runs.push_back({r.seed, r.task_id, {}});
      steps.emplace_back();
    }
    steps[it->second][r.step][r.member_index] = &r;
  }
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (const auto& [step, members] : steps[i]) {
      Population pop;
      pop.step = step;
      for (const auto& [idx, r] : members) {
        Trajectory t;
        t.text = r->text;
        t.answer = r->answer;
        t.reward = r->reward;
        t.step = r->step;
        t.parents = r->parents;
        t.truncated = r->truncated;
        t.prompt_hash = r->prompt_hash;
        pop.members.push_back(std::move(t));
      }
      runs[i].populations.push_back(std::move(pop));
    }
  }
  return runs;
}

MetricsBundle metrics_from_states(std::span<const RunState> states, EmbeddingClient* embedder) {
  MetricsBundle b;
  for (const auto& s : states) {
    b.series.push_back({s.config.seed, s.task.id, step_metrics(s, embedder)});
    b.partial = b.partial || s.aborted;
  }
  b.curve = dataset_curve(b.series);
  return b;
}

MetricsBundle metrics_from_records(std::span<const StepRecord> records, bool partial, EmbeddingClient* embedder) {
  MetricsBundle b;
  b.partial = partial;
  for (const auto& run : group_records(records)) {
    b.series.push_back({run.seed, run.task_id, step_metrics(std::span<const Population>(run.populations), embedder)});
  }
  b.curve = dataset_curve(b.series);
  return b;
}

void write_metrics(const std::filesystem::path& dir, const MetricsBundle& bundle, const std::string& series_name) {
  std::filesystem::create_directories(dir / "plotdata");
  {
    std::ofstream csv(dir / "metrics.csv", std::ios::binary);
    csv << "seed,task_id,step,pass_at_1,pass_at_n,gap,diversity,budget_used\n";
    for (const auto& s : bundle.series) {
      for (const auto& m : s.steps) {
        csv << s.seed << ',' << s.task_id << ',' << m.step << ',' << format_double(m.pass_at_1) << ','
            << format_double(m.pass_at_n) << ',' << format_double(m.gap) << ','
            << (m.diversity ? format_double(*m.diversity) : std::string()) << ',' << m.budget_used << '\n';
      }
    }
  }
  {
    ojson series = ojson::array();
    for (const auto& s : bundle.series) {
      ojson steps = ojson::array();
      for (const auto& m : s.steps) {
        steps.push_back({{"step", m.step},
                         {"pass_at_1", m.pass_at_1},
                         {"pass_at_n", m.pass_at_n},
                         {"gap", m.gap},
                         {"diversity", m.diversity ? ojson(*m.diversity) : ojson(nullptr)},
                         {"budget_used", m.budget_used}});
      }
      series.push_back({{"seed", s.seed}, {"task_id", s.task_id}, {"steps", std::move(steps)}});
    }
    ojson curve = ojson::array();
    for (const auto& c : bundle.curve) {
      curve.push_back({{"step", c.step},
                       {"pass_at_1", c.pass_at_1},
                       {"pass_at_1_std", c.pass_at_1_std},
                       {"pass_at_n", c.pass_at_n},
                       {"pass_at_n_std", c.pass_at_n_std},
                       {"gap", c.gap},
                       {"gap_std", c.gap_std},
                       {"diversity", c.diversity ? ojson(*c.diversity) : ojson(nullptr)},
                       {"seeds", c.seeds},
                       {"tasks", c.tasks}});
    }
    const ojson doc = {{"partial", bundle.partial}, {"series", std::move(series)}, {"dataset", std::move(curve)}};
    std::ofstream js(dir / "metrics.json", std::ios::binary);
    js << doc.dump(2) << '\n';
  }
  std::vector<PlotRow> rows;
  for (const auto& c : bundle.curve) {
    const double root = c.seeds > 0 ? std::sqrt(static_cast<double>(c.seeds)) : 1.0;
    rows.push_back({series_name, c.step, c.pass_at_1, c.pass_at_n, c.gap, c.pass_at_1_std / root,
                    c.pass_at_n_std / root, c.gap_std / root});
  }
  {
    std::ofstream p1(dir / "plotdata" / "pass_at_1_vs_step.csv", std::ios::binary);
    write_plot_csv(p1, rows);
  }
  {
    std::ofstream gap(dir / "plotdata" / "gap_vs_step.csv", std::ios::binary);
    gap << "series,step,gap,gap_se\n";
    for (const auto& r : rows) gap << r.series << ',' << r.step << ',' << format_double(r.gap) << ',' << format_double(r.gap_se) << '\n';
  }
}

std::string sha1_hex(std::string_view content) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw std::runtime_error("EVP_MD_CTX_new failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("SHA-1 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

std::string git_blob_sha1(std::string_view content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob += '\0';
  blob.append(content);
  return sha1_hex(blob);
}

}  // namespace rsa
