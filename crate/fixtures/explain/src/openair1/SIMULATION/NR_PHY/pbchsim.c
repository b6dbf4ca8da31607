#include <stdio.h>
#include <stdlib.h>
#include <unistd.h>

#include "nr_phy_common.h"

static void set_cfo(double hz);

int main(int argc, char **argv)
{
  int c;
  double snr0 = -2.0, snr1 = 2.0;
  int n_trials = 1;
  int N_RB_DL = 273;
  int mu = 1;
  NR_DL_FRAME_PARMS *frame_parms = get_frame_parms();

  while ((c = getopt(argc, argv, "c:hm:n:o:R:s:S:")) != -1) {
    switch (c) {
      case 'c':
        frame_parms->Nid_cell = atoi(optarg);
        break;

      case 'm':
        mu = atoi(optarg);
        break;

      case 'n':
        n_trials = atoi(optarg);
        break;

      case 'o':
        /* carrier frequency offset in Hz */
        set_cfo(atof(optarg));
        break;

      case 'R':
        N_RB_DL = atoi(optarg);
        break;

      case 's':
        snr0 = atof(optarg);
        printf("Setting SNR0 to %f\n", snr0);
        break;

      case 'S':
        snr1 = atof(optarg);
        printf("Setting SNR1 to %f\n", snr1);
        break;

      case 'h':
      default:
        printf("usage: %s -s snr0 -S snr1 -n trials -R rb -m mu -c cell -o cfo\n", argv[0]);
        exit(-1);
    }
  }

  run_pbch_test(frame_parms, snr0, snr1, n_trials, N_RB_DL, mu);
  return 0;
}
