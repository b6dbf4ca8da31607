/* Long-option parsing shared by the softmodems; no single-letter switch arms. */
#include <string.h>

int parse_long_option(const char *name, const char *value, int *out)
{
  if (strcmp(name, "--rf-config") == 0) {
    *out = atoi(value);
    return 0;
  }
  return -1;
}
