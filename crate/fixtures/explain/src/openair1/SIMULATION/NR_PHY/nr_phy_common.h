#ifndef NR_PHY_COMMON_H
#define NR_PHY_COMMON_H

typedef struct {
  int Nid_cell;
  int N_RB_DL;
  int numerology_index;
} NR_DL_FRAME_PARMS;

NR_DL_FRAME_PARMS *get_frame_parms(void);
void run_pbch_test(NR_DL_FRAME_PARMS *fp, double snr0, double snr1, int trials, int rb, int mu);

#endif
