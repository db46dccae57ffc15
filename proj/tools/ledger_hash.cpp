// Prints the 64-bit FNV-1a hash of a file's bytes; used to compare ledgers
// from independent runs for byte identity.
#include <cstdio>

#include "varistep/ledger.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: ledger_hash <file> [<file> ...]\n");
    return 2;
  }
  int rc = 0;
  for (int i = 1; i < argc; ++i) {
    try {
      std::printf("%s  %s\n", varistep::hex64(varistep::hash_file(argv[i])).c_str(), argv[i]);
    } catch (const varistep::Error& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      rc = 4;
    }
  }
  return rc;
}
