"""Desk-scale style-based GAN toolkit.

Train a small style-based GAN on an image corpus, generate novel images,
score real-vs-generated distributions with FID and KID, and aggregate human
case-study ratings into a report with figures.
"""

__version__ = "0.1.0"

from .autodiff import (Tape, Tensor, backward, conv2d, elementwise, grad,
                       grad_check, matmul)
from .dataset import (DatasetManifest, ImageRecord, filter_rgb, resize_image,
                      scan_directory, training_batch)
from .metrics import (FeatureSet, GaussianStats, KidConfig, MetricReport,
                      evaluate, extract_features, fid, gaussian_stats, kid,
                      load_features, save_features, sqrtm_spd)
from .model import (DiscriminatorParams, GeneratorParams, ModelConfig,
                    demodulate_weights, discriminator_forward, gan_losses,
                    generator_forward, mapping_forward)
from .survey import (CaseStudyReport, SurveyResponse, aggregate,
                     attribution_rate, emit_report, parse_responses)
from .trainer import (TrainConfig, TrainState, init_train_state,
                      load_checkpoint, monitor_fid, resume, save_checkpoint,
                      stop_rule, train_loop, train_step)
