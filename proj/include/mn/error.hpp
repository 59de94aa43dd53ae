#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mn {

/// Base of every error thrown by the toolkit.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class InvalidArg : public Error {
  public:
    using Error::Error;
};

/// A pairwise metric was asked to score fewer than two documents.
class InsufficientDocs : public Error {
  public:
    explicit InsufficientDocs(std::size_t got)
        : Error("at least 2 documents required, got " + std::to_string(got)), got_(got) {}
    std::size_t got() const noexcept { return got_; }

  private:
    std::size_t got_;
};

class NoPrompts : public Error {
  public:
    using Error::Error;
};

class DuplicateId : public Error {
  public:
    explicit DuplicateId(const std::string &id) : Error("duplicate id: " + id), id_(id) {}
    const std::string &id() const noexcept { return id_; }

  private:
    std::string id_;
};

class StorageError : public Error {
  public:
    using Error::Error;
};

class InvalidRecord : public Error {
  public:
    using Error::Error;
};

/// Malformed JSONL content; line numbers are 1-based.
class ParseError : public Error {
  public:
    ParseError(std::size_t line, const std::string &what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

/// Transport or server failure after retries were exhausted.
class ProviderError : public Error {
  public:
    ProviderError(int status, int attempts, const std::string &what)
        : Error(what + " (status " + std::to_string(status) + ", attempts " +
                std::to_string(attempts) + ")"),
          status_(status), attempts_(attempts) {}
    int status() const noexcept { return status_; }
    int attempts() const noexcept { return attempts_; }

  private:
    int status_;
    int attempts_;
};

class AuthError : public ProviderError {
  public:
    AuthError(int status, const std::string &what) : ProviderError(status, 1, what) {}
};

/// The judge replied, but the reply could not be read as a verdict even after a reminder.
class JudgeParseError : public Error {
  public:
    JudgeParseError(const std::string &reply, const std::string &what)
        : Error(what + ": " + reply), reply_(reply) {}
    const std::string &reply() const noexcept { return reply_; }

  private:
    std::string reply_;
};

/// A judge failed part-way through a sequence. `index` is the item being judged.
class JudgeError : public Error {
  public:
    JudgeError(std::size_t index, const std::string &cause)
        : Error("judge failed at item " + std::to_string(index) + ": " + cause), index_(index) {}
    std::size_t index() const noexcept { return index_; }

  private:
    std::size_t index_;
};

class SourceError : public Error {
  public:
    using Error::Error;
};

class ViewShortfall : public Error {
  public:
    ViewShortfall(std::size_t got, std::size_t want)
        : Error("view generation produced " + std::to_string(got) + " of " + std::to_string(want) +
                " views"),
          got_(got), want_(want) {}
    std::size_t got() const noexcept { return got_; }
    std::size_t want() const noexcept { return want_; }

  private:
    std::size_t got_;
    std::size_t want_;
};

class MissingEmbeddings : public Error {
  public:
    using Error::Error;
};

} // namespace mn
