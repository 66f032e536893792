#include "glandscreen/service/case_store.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>

#include <sqlite3.h>

#include "glandscreen/error.hpp"

using nlohmann::json;

namespace glandscreen::service {

std::string_view to_string(Disposition d) {
  return d == Disposition::Confirm ? "confirm" : "override";
}

std::optional<Disposition> disposition_from_string(std::string_view s) {
  if (s == "confirm") return Disposition::Confirm;
  if (s == "override") return Disposition::Override;
  return std::nullopt;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto secs = std::chrono::system_clock::to_time_t(now);
  const auto micros =
      std::chrono::duration_cast<std::chrono::microseconds>(now.time_since_epoch()).count() %
      1000000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[96];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%06ldZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                static_cast<long>(micros));
  return buf;
}

namespace {

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS models (
  id          TEXT PRIMARY KEY,
  checkpoint  TEXT NOT NULL,
  config_json TEXT NOT NULL,
  is_default  INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS cases (
  seq           INTEGER PRIMARY KEY AUTOINCREMENT,
  id            TEXT NOT NULL UNIQUE,
  created_at    TEXT NOT NULL,
  image_path    TEXT NOT NULL,
  image_sha256  TEXT NOT NULL,
  model_id      TEXT NOT NULL,
  threshold     REAL NOT NULL,
  response_json TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS dispositions (
  id          INTEGER PRIMARY KEY AUTOINCREMENT,
  case_id     TEXT NOT NULL REFERENCES cases(id),
  created_at  TEXT NOT NULL,
  disposition TEXT NOT NULL CHECK (disposition IN ('confirm', 'override')),
  note        TEXT NOT NULL DEFAULT ''
);
CREATE TABLE IF NOT EXISTS explanations (
  case_id      TEXT NOT NULL REFERENCES cases(id),
  target_class INTEGER NOT NULL,
  payload_json TEXT NOT NULL,
  PRIMARY KEY (case_id, target_class)
);
)sql";

class Statement {
 public:
  Statement(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK) {
      throw Error(ErrorCode::IoError, std::string("sqlite prepare: ") + sqlite3_errmsg(db));
    }
  }
  ~Statement() { sqlite3_finalize(stmt_); }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;

  Statement& bind(int i, const std::string& s) {
    sqlite3_bind_text(stmt_, i, s.c_str(), static_cast<int>(s.size()), SQLITE_TRANSIENT);
    return *this;
  }
  Statement& bind(int i, double v) {
    sqlite3_bind_double(stmt_, i, v);
    return *this;
  }
  Statement& bind(int i, long v) {
    sqlite3_bind_int64(stmt_, i, v);
    return *this;
  }
  /// True while rows are available.
  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw Error(ErrorCode::IoError, std::string("sqlite step: ") + sqlite3_errmsg(db_));
  }
  std::string text(int col) const {
    const auto* p = sqlite3_column_text(stmt_, col);
    return p ? reinterpret_cast<const char*>(p) : "";
  }
  double real(int col) const { return sqlite3_column_double(stmt_, col); }
  long integer(int col) const { return static_cast<long>(sqlite3_column_int64(stmt_, col)); }

 private:
  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

}  // namespace

SqliteCaseStore::SqliteCaseStore(const std::filesystem::path& db_path) {
  std::error_code ec;
  if (db_path.has_parent_path()) std::filesystem::create_directories(db_path.parent_path(), ec);
  if (sqlite3_open(db_path.string().c_str(), &db_) != SQLITE_OK) {
    const std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    throw Error(ErrorCode::IoError, "cannot open case store " + db_path.string() + ": " + msg);
  }
  exec("PRAGMA foreign_keys = ON;");
  exec(kSchema);
}

SqliteCaseStore::~SqliteCaseStore() { sqlite3_close(db_); }

void SqliteCaseStore::exec(const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    const std::string msg = err ? err : "unknown error";
    sqlite3_free(err);
    throw Error(ErrorCode::IoError, "sqlite: " + msg);
  }
}

void SqliteCaseStore::insert_case(const CaseRecord& r) {
  std::lock_guard lock(mutex_);
  Statement st(db_,
               "INSERT INTO cases (id, created_at, image_path, image_sha256, model_id, threshold, "
               "response_json) VALUES (?, ?, ?, ?, ?, ?, ?)");
  st.bind(1, r.id).bind(2, r.created_at).bind(3, r.image_path).bind(4, r.image_sha256);
  st.bind(5, r.model_id).bind(6, r.threshold).bind(7, r.response.dump());
  st.step();
}

std::vector<DispositionEntry> SqliteCaseStore::dispositions_locked(const std::string& case_id) {
  Statement st(db_,
               "SELECT id, created_at, disposition, note FROM dispositions WHERE case_id = ? "
               "ORDER BY id ASC");
  st.bind(1, case_id);
  std::vector<DispositionEntry> out;
  while (st.step()) {
    out.push_back({st.integer(0), st.text(1),
                   disposition_from_string(st.text(2)).value_or(Disposition::Confirm),
                   st.text(3)});
  }
  return out;
}

namespace {

CaseRecord read_case(const Statement& st) {
  CaseRecord r;
  r.id = st.text(0);
  r.created_at = st.text(1);
  r.image_path = st.text(2);
  r.image_sha256 = st.text(3);
  r.model_id = st.text(4);
  r.threshold = st.real(5);
  r.response = json::parse(st.text(6));
  return r;
}

constexpr const char* kCaseColumns =
    "SELECT id, created_at, image_path, image_sha256, model_id, threshold, response_json FROM cases ";

}  // namespace

std::optional<CaseRecord> SqliteCaseStore::get_case(const std::string& id) {
  std::lock_guard lock(mutex_);
  Statement st(db_, (std::string(kCaseColumns) + "WHERE id = ?").c_str());
  st.bind(1, id);
  if (!st.step()) return std::nullopt;
  CaseRecord r = read_case(st);
  r.dispositions = dispositions_locked(r.id);
  return r;
}

std::vector<CaseRecord> SqliteCaseStore::list_cases(int limit) {
  std::lock_guard lock(mutex_);
  Statement st(db_, (std::string(kCaseColumns) + "ORDER BY seq DESC LIMIT ?").c_str());
  st.bind(1, static_cast<long>(limit));
  std::vector<CaseRecord> out;
  while (st.step()) out.push_back(read_case(st));
  for (auto& r : out) r.dispositions = dispositions_locked(r.id);
  return out;
}

DispositionEntry SqliteCaseStore::add_disposition(const std::string& case_id, Disposition d,
                                                  const std::string& note) {
  std::lock_guard lock(mutex_);
  DispositionEntry e{0, utc_timestamp(), d, note};
  Statement st(db_,
               "INSERT INTO dispositions (case_id, created_at, disposition, note) VALUES (?, ?, ?, ?)");
  st.bind(1, case_id).bind(2, e.created_at).bind(3, std::string(to_string(d))).bind(4, note);
  st.step();
  e.id = static_cast<long>(sqlite3_last_insert_rowid(db_));
  return e;
}

std::optional<json> SqliteCaseStore::get_explanation(const std::string& case_id,
                                                     int target_class) {
  std::lock_guard lock(mutex_);
  Statement st(db_,
               "SELECT payload_json FROM explanations WHERE case_id = ? AND target_class = ?");
  st.bind(1, case_id).bind(2, static_cast<long>(target_class));
  if (!st.step()) return std::nullopt;
  return json::parse(st.text(0));
}

void SqliteCaseStore::put_explanation(const std::string& case_id, int target_class,
                                      const json& payload) {
  std::lock_guard lock(mutex_);
  Statement st(db_,
               "INSERT OR REPLACE INTO explanations (case_id, target_class, payload_json) "
               "VALUES (?, ?, ?)");
  st.bind(1, case_id).bind(2, static_cast<long>(target_class)).bind(3, payload.dump());
  st.step();
}

void SqliteCaseStore::record_model(const std::string& id, const std::string& checkpoint,
                                   const json& config, bool is_default) {
  std::lock_guard lock(mutex_);
  Statement st(db_,
               "INSERT OR REPLACE INTO models (id, checkpoint, config_json, is_default) "
               "VALUES (?, ?, ?, ?)");
  st.bind(1, id).bind(2, checkpoint).bind(3, config.dump()).bind(4, is_default ? 1L : 0L);
  st.step();
}

}  // namespace glandscreen::service
