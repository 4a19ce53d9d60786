import logging

#~ DEBUG bits (turn on logging in a specified module):
#~ 0=tensor, tape
#~ 1=attention, model
#~ 2=data, codecs, checkpoint headers
#~ 3=training loop
#~ 4=evaluation
#~ 5=command line

def log(*a):
    #~ print('MAStools:', *a)
    logging.getLogger('MAStools').debug(*a)
