#include <stdlib.h>
#include <unistd.h>

int main(int argc, char **argv)
{
  int c;
  double snr_start = 0.0;
  int n_frames = 1;

  while ((c = getopt(argc, argv, "n:s:")) != -1) {
    switch (c) {
      case 'n':
        n_frames = atoi(optarg);
        break;
      case 's':
        snr_start = atof(optarg);
        break;
      default:
        exit(-1);
    }
  }
  return run_prach(snr_start, n_frames);
}
