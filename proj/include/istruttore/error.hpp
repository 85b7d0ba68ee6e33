// Copyright 2026 The Istruttore Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace istruttore {

enum class ErrorKind {
  kValidation,
  kSchema,
  kDecode,
  kPrecondition,
  kConfiguration,
  kDimension,
  kExtraction,
  kParse,
  kTask,
  kUndefinedScore,
  kIo,
  kTransport,
  kTranslation,
  kJob,
  kJudge,
  kNumeric,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kSchema: return "schema error";
    case ErrorKind::kDecode: return "decode error";
    case ErrorKind::kPrecondition: return "precondition error";
    case ErrorKind::kConfiguration: return "configuration error";
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kExtraction: return "extraction error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kTask: return "task error";
    case ErrorKind::kUndefinedScore: return "undefined score";
    case ErrorKind::kIo: return "i/o error";
    case ErrorKind::kTransport: return "transport error";
    case ErrorKind::kTranslation: return "translation error";
    case ErrorKind::kJob: return "job error";
    case ErrorKind::kJudge: return "judge error";
    case ErrorKind::kNumeric: return "numeric error";
  }
  return "error";
}

// Process exit code for an error kind: 1 validation-like, 2 transport-like,
// 3 numeric.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kTransport:
    case ErrorKind::kTranslation:
    case ErrorKind::kJob:
    case ErrorKind::kJudge:
      return 2;
    case ErrorKind::kNumeric:
      return 3;
    default:
      return 1;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DecodeError : public Error {
 public:
  DecodeError(std::size_t byte_offset, const std::string& message)
      : Error(ErrorKind::kDecode,
              message + " at byte offset " + std::to_string(byte_offset)),
        byte_offset_(byte_offset) {}

  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

class SchemaError : public Error {
 public:
  SchemaError(std::string key, std::size_t record_index, const std::string& what)
      : Error(ErrorKind::kSchema, what + " '" + key + "' in record " +
                                      std::to_string(record_index)),
        key_(std::move(key)),
        record_index_(record_index) {}

  const std::string& key() const noexcept { return key_; }
  std::size_t record_index() const noexcept { return record_index_; }

 private:
  std::string key_;
  std::size_t record_index_;
};

class ValidationError : public Error {
 public:
  ValidationError(std::size_t record_index, const std::string& message)
      : Error(ErrorKind::kValidation,
              "record " + std::to_string(record_index) + ": " + message),
        record_index_(record_index) {}

  std::size_t record_index() const noexcept { return record_index_; }

 private:
  std::size_t record_index_;
};

// Raised when a transport keeps failing after the retry budget is spent.
class TransportError : public Error {
 public:
  TransportError(const std::string& message, bool retryable = true)
      : Error(ErrorKind::kTransport, message), retryable_(retryable) {}

  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

class TranslationError : public Error {
 public:
  TranslationError(std::string field, std::string record_id,
                   const std::string& cause)
      : Error(ErrorKind::kTranslation, "field '" + field + "' of record " +
                                           record_id + ": " + cause),
        field_(std::move(field)),
        record_id_(std::move(record_id)) {}

  const std::string& field() const noexcept { return field_; }
  const std::string& record_id() const noexcept { return record_id_; }

 private:
  std::string field_;
  std::string record_id_;
};

class JobError : public Error {
 public:
  JobError(std::size_t completed, const std::string& cause)
      : Error(ErrorKind::kJob, "aborted after " + std::to_string(completed) +
                                   " completed records: " + cause),
        completed_(completed) {}

  std::size_t completed() const noexcept { return completed_; }

 private:
  std::size_t completed_;
};

class NumericError : public Error {
 public:
  NumericError(std::size_t step, const std::string& message)
      : Error(ErrorKind::kNumeric,
              message + " at step " + std::to_string(step)),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class JudgeParseError : public Error {
 public:
  explicit JudgeParseError(std::string raw_response)
      : Error(ErrorKind::kParse,
              "judge response has no standalone 0/1: \"" + raw_response + "\""),
        raw_response_(std::move(raw_response)) {}

  const std::string& raw_response() const noexcept { return raw_response_; }

 private:
  std::string raw_response_;
};

}  // namespace istruttore
