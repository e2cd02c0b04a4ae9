#!/usr/bin/env node
import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { SchemaMismatch } from './csv.js';
import { plotHistogram, plotRolling } from './plots.js';

const argv = yargs(hideBin(process.argv))
  .scriptName('batchvc-plots')
  .usage('$0 --csv FILE --out DIR [--window N] [--clip S] [--png]')
  .option('csv', { type: 'string', demandOption: true, describe: 'benchmark CSV input' })
  .option('out', { type: 'string', demandOption: true, describe: 'output directory' })
  .option('window', { type: 'number', default: 100, describe: 'rolling-average window' })
  .option('clip', { type: 'number', describe: 'cut histogram tails at this many seconds' })
  .option('bin-width', { type: 'number', default: 0.1, describe: 'histogram bin width [s]' })
  .option('png', { type: 'boolean', default: false, describe: 'also rasterize to PNG' })
  .strict()
  .parseSync();

const config = {
  inputCsv: argv.csv,
  outputDir: argv.out,
  window: argv.window,
  histClipSeconds: argv.clip,
  binWidth: argv['bin-width'],
  png: argv.png,
};

try {
  const files = [...(await plotRolling(config)), ...(await plotHistogram(config))];
  for (const f of files) console.log(f);
} catch (err) {
  if (err instanceof SchemaMismatch) {
    console.error(`schema mismatch: ${err.message}`);
    process.exit(2);
  }
  throw err;
}
