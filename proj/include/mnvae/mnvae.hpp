#pragma once

// Umbrella header: unsupervised speech/music separation with a multinode
// recurrent VAE and robust-PCA mask enhancement.

#include "mnvae/adam.hpp"
#include "mnvae/audio.hpp"
#include "mnvae/gmm.hpp"
#include "mnvae/matrix.hpp"
#include "mnvae/node_estimate.hpp"
#include "mnvae/pca.hpp"
#include "mnvae/pipeline.hpp"
#include "mnvae/rng.hpp"
#include "mnvae/rpca.hpp"
#include "mnvae/sisdr.hpp"
#include "mnvae/stft.hpp"
#include "mnvae/svd.hpp"
#include "mnvae/synth.hpp"
#include "mnvae/train.hpp"
#include "mnvae/vae.hpp"
#include "mnvae/window.hpp"
