#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

struct sqlite3;

namespace glandscreen::service {

enum class Disposition { Confirm, Override };

std::string_view to_string(Disposition d);
/// Returns nullopt for anything other than "confirm" / "override".
std::optional<Disposition> disposition_from_string(std::string_view s);

struct DispositionEntry {
  long id = 0;
  std::string created_at;
  Disposition disposition = Disposition::Confirm;
  std::string note;
};

struct CaseRecord {
  std::string id;
  std::string created_at;
  std::string image_path;
  std::string image_sha256;
  std::string model_id;
  double threshold = 0.5;
  /// The exact response payload returned by /api/predict.
  nlohmann::json response;
  std::vector<DispositionEntry> dispositions;  // oldest first
};

/// Storage boundary for cases, dispositions and cached explanations.
class CaseStore {
 public:
  virtual ~CaseStore() = default;

  virtual void insert_case(const CaseRecord& record) = 0;
  virtual std::optional<CaseRecord> get_case(const std::string& id) = 0;
  /// Most recent first.
  virtual std::vector<CaseRecord> list_cases(int limit) = 0;
  virtual DispositionEntry add_disposition(const std::string& case_id, Disposition d,
                                           const std::string& note) = 0;
  virtual std::optional<nlohmann::json> get_explanation(const std::string& case_id,
                                                        int target_class) = 0;
  virtual void put_explanation(const std::string& case_id, int target_class,
                               const nlohmann::json& payload) = 0;
  virtual void record_model(const std::string& id, const std::string& checkpoint,
                            const nlohmann::json& config, bool is_default) = 0;
};

/// Single-file SQLite store. All statements run under one mutex.
class SqliteCaseStore : public CaseStore {
 public:
  explicit SqliteCaseStore(const std::filesystem::path& db_path);
  ~SqliteCaseStore() override;
  SqliteCaseStore(const SqliteCaseStore&) = delete;
  SqliteCaseStore& operator=(const SqliteCaseStore&) = delete;

  void insert_case(const CaseRecord& record) override;
  std::optional<CaseRecord> get_case(const std::string& id) override;
  std::vector<CaseRecord> list_cases(int limit) override;
  DispositionEntry add_disposition(const std::string& case_id, Disposition d,
                                   const std::string& note) override;
  std::optional<nlohmann::json> get_explanation(const std::string& case_id,
                                                int target_class) override;
  void put_explanation(const std::string& case_id, int target_class,
                       const nlohmann::json& payload) override;
  void record_model(const std::string& id, const std::string& checkpoint,
                    const nlohmann::json& config, bool is_default) override;

 private:
  void exec(const char* sql);
  std::vector<DispositionEntry> dispositions_locked(const std::string& case_id);

  sqlite3* db_ = nullptr;
  std::mutex mutex_;
};

std::string utc_timestamp();

}  // namespace glandscreen::service
